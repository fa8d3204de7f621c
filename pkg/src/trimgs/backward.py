"""Analytic gradients of image-space losses and the size-bucketed gradient statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import _kernels
from .core import SH_C1, Camera, GaussianScene
from .render import NORMAL_EPS, RenderOutput, render


@dataclass
class ParamGradients:
    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    sh1: Optional[np.ndarray] = None

    FIELDS = ("means", "log_scales", "rotations", "opacity_logits", "colors", "sh1")

    @classmethod
    def zeros_like(cls, scene: GaussianScene) -> "ParamGradients":
        n = len(scene)
        return cls(
            means=np.zeros((n, 3)),
            log_scales=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            opacity_logits=np.zeros(n),
            colors=np.zeros((n, 3)),
            sh1=None if scene.sh1 is None else np.zeros((n, 3, 3)),
        )

    def __add__(self, other: "ParamGradients") -> "ParamGradients":
        kw = {}
        for name in self.FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            kw[name] = None if a is None else a + b
        return ParamGradients(**kw)

    def items(self):
        for name in self.FIELDS:
            value = getattr(self, name)
            if value is not None:
                yield name, value

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for _, v in self.items())


def rotmat_grad_to_quat(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Chain ``dL/dR`` through the (normalising) quaternion-to-matrix map."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    G = dR
    dw = 2 * (-z * G[:, 0, 1] + y * G[:, 0, 2] + z * G[:, 1, 0] - x * G[:, 1, 2] - y * G[:, 2, 0] + x * G[:, 2, 1])
    dx = 2 * (y * G[:, 0, 1] + z * G[:, 0, 2] + y * G[:, 1, 0] - 2 * x * G[:, 1, 1] - w * G[:, 1, 2]
              + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2])
    dy = 2 * (-2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2] + x * G[:, 1, 0] + z * G[:, 1, 2]
              - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2])
    dz = 2 * (-2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2] + w * G[:, 1, 0] - 2 * z * G[:, 1, 1]
              + y * G[:, 1, 2] + x * G[:, 2, 0] + y * G[:, 2, 1])
    dqn = np.stack([dw, dx, dy, dz], axis=1)
    # tangent projection from the normalisation
    return (dqn - qn * np.sum(qn * dqn, axis=1, keepdims=True)) / norm


def _normal_grad_to_raw(out: RenderOutput, grad_normal: np.ndarray) -> np.ndarray:
    raw = out.raw_features[..., 3:]
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    n = raw / np.maximum(norm, NORMAL_EPS)
    g = (grad_normal - n * np.sum(n * grad_normal, axis=-1, keepdims=True)) / np.maximum(norm, NORMAL_EPS)
    return np.where(norm > NORMAL_EPS, g, 0.0)


def backward_render(
    scene: GaussianScene,
    camera: Camera,
    grad_color: np.ndarray,
    grad_normal: Optional[np.ndarray] = None,
    out: Optional[RenderOutput] = None,
) -> ParamGradients:
    """Gradients of ``sum(grad_color * color + grad_normal * normal_map)`` w.r.t. every parameter.

    ``out`` must come from ``render(scene, camera)`` with the same background; it is
    re-rendered when omitted.
    """
    if out is None:
        out = render(scene, camera)
    proj, tiles = out.proj, out.tiles
    H, W = camera.height, camera.width
    grad_img = np.zeros((H, W, 6))
    grad_img[..., :3] = grad_color
    if grad_normal is not None:
        grad_img[..., 3:] = _normal_grad_to_raw(out, grad_normal)
    feats = np.ascontiguousarray(np.concatenate([proj.colors, proj.normal], axis=1))

    P = tiles.n_pairs
    pg_mean = np.zeros((P, 2))
    pg_conic = np.zeros((P, 3))
    pg_op = np.zeros(P)
    pg_feat = np.zeros((P, 6))
    _kernels.backward_kernel(
        tiles.offsets, tiles.gauss, tiles.n_tx, tiles.tile_size, W, H,
        proj.mean2d, proj.conic, proj.opacity, feats, out.background,
        out.raw_features, out.last, grad_img,
        pg_mean, pg_conic, pg_op, pg_feat,
    )
    n = len(scene)
    g_mean2d = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_op = np.zeros(n)
    g_feat = np.zeros((n, 6))
    np.add.at(g_mean2d, tiles.gauss, pg_mean)
    np.add.at(g_conic, tiles.gauss, pg_conic)
    np.add.at(g_op, tiles.gauss, pg_op)
    np.add.at(g_feat, tiles.gauss, pg_feat)
    return _projection_backward(scene, camera, proj, g_mean2d, g_conic, g_op, g_feat)


def _projection_backward(scene, camera, proj, g_mean2d, g_conic, g_op, g_feat) -> ParamGradients:
    grads = ParamGradients.zeros_like(scene)
    v = proj.valid
    Wr = camera.rotation
    fx, fy = camera.fx, camera.fy
    x, y, z = proj.x_cam[:, 0], proj.x_cam[:, 1], np.where(v, proj.x_cam[:, 2], 1.0)

    # conic (a, b, c) -> symmetric inverse covariance K; b sits in both off-diagonals
    gK = np.empty((len(scene), 2, 2))
    gK[:, 0, 0] = g_conic[:, 0]
    gK[:, 0, 1] = gK[:, 1, 0] = 0.5 * g_conic[:, 1]
    gK[:, 1, 1] = g_conic[:, 2]
    K = np.empty_like(gK)
    K[:, 0, 0] = proj.conic[:, 0]
    K[:, 0, 1] = K[:, 1, 0] = proj.conic[:, 1]
    K[:, 1, 1] = proj.conic[:, 2]
    g_cov2d = -K @ gK @ K

    M, cov3d = proj.M, proj.cov3d
    g_cov3d = M.transpose(0, 2, 1) @ g_cov2d @ M
    g_M = 2.0 * g_cov2d @ M @ cov3d
    g_J = g_M @ Wr.T

    g_xc = np.zeros((len(scene), 3))
    # J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]
    g_xc[:, 0] += g_J[:, 0, 2] * (-fx / z**2)
    g_xc[:, 1] += g_J[:, 1, 2] * (-fy / z**2)
    g_xc[:, 2] += (g_J[:, 0, 0] * (-fx / z**2) + g_J[:, 0, 2] * (2 * fx * x / z**3)
                   + g_J[:, 1, 1] * (-fy / z**2) + g_J[:, 1, 2] * (2 * fy * y / z**3))
    # mean2d = (fx x/z + cx, fy y/z + cy)
    g_xc[:, 0] += g_mean2d[:, 0] * fx / z
    g_xc[:, 1] += g_mean2d[:, 1] * fy / z
    g_xc[:, 2] += -g_mean2d[:, 0] * fx * x / z**2 - g_mean2d[:, 1] * fy * y / z**2
    g_means = g_xc @ Wr

    # cov3d = R diag(s^2) R^T
    R, s2 = proj.R, proj.scales**2
    g_R = 2.0 * g_cov3d @ R * s2[:, None, :]
    g_s2 = np.einsum("nji,njk,nki->ni", R, g_cov3d, R)
    g_logs = g_s2 * 2.0 * s2

    # normal = sign * W R[:, axis]
    g_nworld = (g_feat[:, 3:] * proj.normal_sign[:, None]) @ Wr
    g_R[np.arange(len(scene)), :, proj.normal_axis] += g_nworld
    g_rot = rotmat_grad_to_quat(scene.rotations, g_R)

    g_col = g_feat[:, :3]
    grads.colors[:] = g_col
    if scene.sh1 is not None:
        d = proj.view_dirs
        basis = SH_C1 * np.stack([-d[:, 1], d[:, 2], -d[:, 0]], axis=1)
        grads.sh1[:] = g_col[:, :, None] * basis[:, None, :]
        g_basis = np.einsum("nc,nck->nk", g_col, scene.sh1) * SH_C1
        g_dir = np.stack([-g_basis[:, 2], -g_basis[:, 0], g_basis[:, 1]], axis=1)
        g_dir -= d * np.sum(d * g_dir, axis=1, keepdims=True)
        g_means += g_dir / proj.view_dist[:, None]

    op = proj.opacity
    grads.means[v] = g_means[v]
    grads.log_scales[v] = g_logs[v]
    grads.rotations[v] = g_rot[v]
    grads.opacity_logits[v] = (g_op * op * (1 - op))[v]
    grads.colors[~v] = 0.0
    if grads.sh1 is not None:
        grads.sh1[~v] = 0.0
    return grads


SIZE_BUCKETS = (1e-6, 1e-5, 1e-4, 1e-3, np.inf)


@dataclass
class GradientStats:
    """Mean of (accumulated position-gradient norm / iterations) / det(cov), per size bucket.

    Buckets with no member are absent from ``means``. Gaussians smaller than the
    first edge are counted in ``below_range`` only.
    """

    edges: tuple = SIZE_BUCKETS
    means: Dict[int, float] = field(default_factory=dict)
    counts: Dict[int, int] = field(default_factory=dict)
    below_range: int = 0
    iterations: int = 0

    def label(self, b: int) -> str:
        lo, hi = self.edges[b], self.edges[b + 1]
        return f"[{lo:.0e}, {'inf' if np.isinf(hi) else f'{hi:.0e}'})"

    def strictly_decreasing(self) -> bool:
        vals = [self.means.get(b) for b in range(len(self.edges) - 1)]
        if any(v is None for v in vals):
            return False
        return all(a > b for a, b in zip(vals, vals[1:]))

    def table(self) -> str:
        n = len(self.edges) - 1
        head = ["Size"] + [self.label(b) for b in range(n)]
        row = ["Normalized gradient norm"] + [
            f"{self.means[b]:.4g}" if b in self.means else "-" for b in range(n)
        ]
        cnt = ["Count"] + [str(self.counts.get(b, 0)) for b in range(n)]
        widths = [max(len(r[i]) for r in (head, row, cnt)) for i in range(n + 1)]
        fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))
        return "\n".join([fmt(head), "-+-".join("-" * w for w in widths), fmt(row), fmt(cnt)])


def accumulate_gradient_stats(scene: GaussianScene, grad_norm_sum: np.ndarray, window: int = 300) -> GradientStats:
    """Bucket Gaussians by det(cov) and average their normalised mean gradient norm.

    ``grad_norm_sum`` holds, per Gaussian of ``scene``, the sum of position-gradient
    norms over ``window`` iterations.
    """
    det = np.prod(scene.scales**2, axis=1)
    per_iter = np.asarray(grad_norm_sum, dtype=np.float64) / window
    normalized = per_iter / det
    active = per_iter != 0
    stats = GradientStats(iterations=window)
    stats.below_range = int(np.sum(active & (det < SIZE_BUCKETS[0])))
    bucket = np.searchsorted(np.asarray(SIZE_BUCKETS), det, side="right") - 1
    for b in range(len(SIZE_BUCKETS) - 1):
        members = active & (bucket == b)
        if members.any():
            stats.means[b] = float(normalized[members].mean())
            stats.counts[b] = int(members.sum())
    return stats
