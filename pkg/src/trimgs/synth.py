"""Synthetic desk-scale scenes: surfaces, camera rings, targets and perturbed initialisations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .core import Camera, GaussianScene, bounding_radius, logit, rotmat_to_quat
from .render import render_reference

KINDS = ("plane", "box", "checkerboard")


@dataclass
class SynthParams:
    size: float = 1.0  # half-extent of the plane / box
    gt_resolution: Optional[int] = None  # Gaussians per axis per face; None -> kind default
    n_gaussians: Optional[int] = None  # initial scene size incl. floaters; None -> GT layout
    position_noise: float = 0.0
    scale_inflation: float = 1.0
    scale_jitter: float = 0.0  # per-Gaussian log-uniform factor in [e^-j, e^j]
    rotation_noise: float = 0.0  # std of a random-axis rotation angle, radians
    floater_rate: float = 0.0
    n_views: int = 6
    camera_radius: float = 3.0
    elevation_deg: float = 55.0
    fov_deg: float = 50.0
    width: int = 64
    height: int = 64
    frequency: int = 8  # checkerboard periods across the quad
    thickness: float = 0.1  # normal-axis scale relative to in-plane scale
    n_gt_points: int = 2000
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.size > 0 or not self.camera_radius > 0:
            raise ValueError("size and camera_radius must be positive")
        if not 0.0 <= self.floater_rate < 1.0:
            raise ValueError("floater_rate must lie in [0, 1)")
        if min(self.position_noise, self.scale_jitter, self.rotation_noise) < 0 or not self.scale_inflation > 0:
            raise ValueError("noise and jitter must be >= 0 and scale_inflation > 0")
        if self.n_views < 1 or self.frequency < 1:
            raise ValueError("n_views and frequency must be >= 1")
        if self.n_gaussians is not None and self.n_gaussians < 1:
            raise ValueError("n_gaussians must be >= 1")


@dataclass
class Face:
    center: np.ndarray
    u: np.ndarray  # in-plane axes, each spanning [-size, size]
    v: np.ndarray
    normal: np.ndarray  # outward, towards the cameras


def _faces(kind: str, size: float) -> List[Face]:
    e = np.eye(3)
    if kind in ("plane", "checkerboard"):
        return [Face(np.zeros(3), e[0], e[1], e[2])]
    faces = []
    for axis in range(3):
        a, b = (axis + 1) % 3, (axis + 2) % 3
        for sign in (1.0, -1.0):
            faces.append(Face(sign * size * e[axis], e[a], sign * e[b], sign * e[axis]))
    return faces


def surface_color(kind: str, points: np.ndarray, size: float, frequency: int) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3) / size
    if kind == "checkerboard":
        cell = np.floor((p[:, :2] + 1.0) * frequency).astype(np.int64)
        white = (cell.sum(axis=1) % 2) == 0
        return np.where(white[:, None], 0.9, 0.1) * np.ones((1, 3))
    c = np.stack([0.5 + 0.35 * p[:, 0], 0.5 + 0.35 * p[:, 1], 0.55 + 0.3 * p[:, 2]], axis=1)
    return np.clip(c, 0.05, 0.95)


def _r2(n: int) -> np.ndarray:
    # additive recurrence on the plastic number; any prefix is well spread
    g = 1.32471795724474602596
    a = np.array([1.0 / g, 1.0 / g**2])
    return np.mod(0.5 + np.arange(1, n + 1)[:, None] * a, 1.0)


def _layout(faces, size, counts, grid: Optional[int]):
    """Positions, per-face spacing and face index for surface Gaussians."""
    pos, spacing, face_idx = [], [], []
    for f, (face, m) in enumerate(zip(faces, counts)):
        if m == 0:
            continue
        if grid is not None:
            t = (np.arange(grid) + 0.5) / grid * 2.0 - 1.0
            uu, vv = np.meshgrid(t, t, indexing="ij")
            st = np.stack([uu.ravel(), vv.ravel()], axis=1)
            h = 2.0 * size / grid
        else:
            st = _r2(m) * 2.0 - 1.0
            h = 2.0 * size / math.sqrt(m)
        pos.append(face.center + size * (st[:, :1] * face.u + st[:, 1:] * face.v))
        spacing.append(np.full(len(st), h))
        face_idx.append(np.full(len(st), f))
    return np.concatenate(pos), np.concatenate(spacing), np.concatenate(face_idx)


def _surface_params(faces, face_idx, spacing, thickness):
    rot = np.stack([rotmat_to_quat(np.stack([faces[f].u, faces[f].v, faces[f].normal], axis=1))
                    for f in range(len(faces))])
    sigma = 0.5 * spacing
    log_scales = np.log(np.stack([sigma, sigma, thickness * sigma], axis=1))
    return log_scales, rot[face_idx]


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([aw * bw - ax * bx - ay * by - az * bz,
                     aw * bx + ax * bw + ay * bz - az * by,
                     aw * by - ax * bz + ay * bw + az * bx,
                     aw * bz + ax * by - ay * bx + az * bw], axis=-1)


def _perturb_rotations(q: np.ndarray, angle_std: float, rng) -> np.ndarray:
    axis = rng.normal(size=(len(q), 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    theta = rng.normal(scale=angle_std, size=len(q))
    dq = np.column_stack([np.cos(theta / 2), np.sin(theta / 2)[:, None] * axis])
    return quat_multiply(dq, q)


def camera_ring(n: int, radius: float, elevation_deg: float, width: int, height: int,
                fov_deg: float = 50.0, target=(0.0, 0.0, 0.0), azimuth0: float = 20.0) -> List[Camera]:
    fx = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
    el = math.radians(elevation_deg)
    cams = []
    for k in range(n):
        az = math.radians(azimuth0 + 360.0 * k / n)
        eye = np.asarray(target) + radius * np.array([math.cos(el) * math.cos(az),
                                                      math.cos(el) * math.sin(az), math.sin(el)])
        cams.append(Camera.look_at(eye, target, fx=fx, width=width, height=height))
    return cams


@dataclass
class SyntheticScene:
    kind: str
    params: SynthParams
    cameras: List[Camera]
    targets: List[np.ndarray]
    gt_scene: GaussianScene
    gt_points: np.ndarray
    floater_ids: np.ndarray
    surface_sigma: float
    faces: List[Face] = field(repr=False, default_factory=list)

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance from each point to the nearest surface face (a bounded square)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        s = self.params.size
        best = np.full(len(p), np.inf)
        for f in self.faces:
            d = p - f.center
            a = np.clip(d @ f.u, -s, s)
            b = np.clip(d @ f.v, -s, s)
            closest = f.center + a[:, None] * f.u + b[:, None] * f.v
            best = np.minimum(best, np.linalg.norm(p - closest, axis=1))
        return best

    def normal_map(self, camera: Camera) -> np.ndarray:
        """Ground-truth camera-space normals by ray casting; zero where a ray misses."""
        H, W = camera.height, camera.width
        u, v = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
        d_cam = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1)
        R = camera.rotation
        d = d_cam @ R  # world directions (R^T d_cam, row-wise)
        o = camera.center
        s = self.params.size
        t_best = np.full((H, W), np.inf)
        n_best = np.zeros((H, W, 3))
        for f in self.faces:
            denom = d @ f.normal
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((f.center - o) @ f.normal) / denom
            hit = o + t[..., None] * d
            rel = hit - f.center
            inside = (np.abs(rel @ f.u) <= s) & (np.abs(rel @ f.v) <= s) & (t > 0) & np.isfinite(t)
            closer = inside & (t < t_best)
            t_best[closer] = t[closer]
            n_best[closer] = f.normal
        n_cam = n_best @ R.T
        x_cam = d_cam * np.where(np.isfinite(t_best), t_best, 0.0)[..., None]
        flip = np.sum(n_cam * x_cam, axis=-1) > 0
        n_cam[flip] *= -1.0
        return n_cam


def make_scene(kind: str, params: Optional[SynthParams] = None, seed: int = 0):
    """Build a synthetic scene and its perturbed initial Gaussian layout.

    Returns ``(SyntheticScene, GaussianScene)``. Floaters are opaque Gaussians
    hidden behind (plane) or inside (box) the surface, at least five surface
    sigmas away from it.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {KINDS}")
    p = params or SynthParams()
    rng = np.random.default_rng(seed)
    faces = _faces(kind, p.size)
    grid = p.gt_resolution or {"plane": 24, "box": 12, "checkerboard": 6 * p.frequency}[kind]

    # ground-truth layout on a cell-centred grid per face
    gt_pos, gt_h, gt_face = _layout(faces, p.size, [grid * grid] * len(faces), grid)
    gt_logs, gt_rot = _surface_params(faces, gt_face, gt_h, p.thickness)
    gt_op = rng.uniform(0.5, 0.9, len(gt_pos))
    gt_col = surface_color(kind, gt_pos, p.size, p.frequency)

    # initial surface: the GT layout itself or a low-discrepancy resampling
    n_gt = len(gt_pos)
    if p.n_gaussians is None:
        n_surf = n_gt
        n_float = int(round(p.floater_rate * n_gt / (1.0 - p.floater_rate)))
    else:
        n_float = int(round(p.floater_rate * p.n_gaussians))
        n_surf = p.n_gaussians - n_float
    if n_surf < 1:
        raise ValueError("no surface Gaussians left after placing floaters")
    if n_surf == n_gt:
        s_pos, s_logs, s_rot, s_op = gt_pos.copy(), gt_logs.copy(), gt_rot.copy(), gt_op.copy()
    else:
        counts = [n_surf // len(faces) + (i < n_surf % len(faces)) for i in range(len(faces))]
        s_pos, s_h, s_face = _layout(faces, p.size, counts, None)
        s_logs, s_rot = _surface_params(faces, s_face, s_h, p.thickness)
        s_op = rng.uniform(0.5, 0.9, n_surf)
    s_col = surface_color(kind, s_pos, p.size, p.frequency)
    s_pos = s_pos + rng.normal(scale=p.position_noise, size=s_pos.shape) if p.position_noise > 0 else s_pos
    s_logs = s_logs + math.log(p.scale_inflation)
    if p.rotation_noise > 0:
        s_rot = _perturb_rotations(s_rot, p.rotation_noise, rng)
    if p.scale_jitter > 0:
        s_logs = s_logs + rng.uniform(-p.scale_jitter, p.scale_jitter, (n_surf, 1))

    surface_sigma = max(p.position_noise, float(np.exp(gt_logs[:, 2]).max()))
    margin = max(5.0 * surface_sigma, 0.1 * p.size)
    if kind == "box":
        inner = p.size - max(margin, 0.2 * p.size)
        f_pos = rng.uniform(-inner, inner, (n_float, 3))
    else:
        depth = rng.uniform(margin, max(margin, 0.3 * p.size) + 1e-9, n_float)
        f_pos = np.column_stack([rng.uniform(-0.6 * p.size, 0.6 * p.size, (n_float, 2)), -depth])
    f_sigma = 0.5 * 2.0 * p.size / math.sqrt(max(n_surf / len(faces), 1))
    f_logs = np.full((n_float, 3), math.log(f_sigma))
    f_rot = np.tile([1.0, 0.0, 0.0, 0.0], (n_float, 1))
    f_op = rng.uniform(0.95, 0.99, n_float)
    f_col = rng.uniform(0.05, 0.95, (n_float, 3))

    init_means = np.concatenate([s_pos, f_pos])
    extent = bounding_radius(np.concatenate([gt_pos, init_means]))
    gt_scene = GaussianScene(gt_pos, gt_logs, gt_rot, logit(gt_op), gt_col, scene_extent=extent)
    init = GaussianScene(
        means=init_means,
        log_scales=np.concatenate([s_logs, f_logs]),
        rotations=np.concatenate([s_rot, f_rot]),
        opacity_logits=logit(np.concatenate([s_op, f_op])),
        colors=np.concatenate([s_col, f_col]),
        scene_extent=extent,
    )
    floater_ids = init.ids[n_surf:].copy()

    cameras = _cameras(kind, p)
    targets = [render_reference(gt_scene, c, p.background) for c in cameras]
    gt_points = _sample_surface(faces, p.size, p.n_gt_points, rng)
    syn = SyntheticScene(kind, p, cameras, targets, gt_scene, gt_points, floater_ids, surface_sigma, faces)
    return syn, init


def _cameras(kind: str, p: SynthParams) -> List[Camera]:
    if kind != "checkerboard":
        return camera_ring(p.n_views, p.camera_radius, p.elevation_deg, p.width, p.height, p.fov_deg)
    # first view looks straight down and frames the quad exactly
    h = p.camera_radius
    top = Camera.look_at([0.0, 0.0, h], [0.0, 0.0, 0.0], up=(0.0, -1.0, 0.0),
                         fx=p.width * h / (2.0 * p.size), fy=p.height * h / (2.0 * p.size),
                         width=p.width, height=p.height)
    ring = camera_ring(p.n_views - 1, p.camera_radius, max(p.elevation_deg, 65.0), p.width, p.height, p.fov_deg)
    return [top] + ring


def _sample_surface(faces, size, n, rng) -> np.ndarray:
    f = rng.integers(0, len(faces), n)
    st = rng.uniform(-size, size, (n, 2))
    centers = np.stack([fc.center for fc in faces])[f]
    U = np.stack([fc.u for fc in faces])[f]
    V = np.stack([fc.v for fc in faces])[f]
    return centers + st[:, :1] * U + st[:, 1:] * V


def random_scene(n: int, seed: int = 0, depth_range=(2.0, 6.0), extent: float = 1.0,
                 sh: bool = False, width: int = 64, height: int = 64):
    """Random Gaussians in front of a fixed camera, for property tests."""
    rng = np.random.default_rng(seed)
    fx = 0.9 * width
    z = rng.uniform(*depth_range, n)
    xy = rng.uniform(-0.45, 0.45, (n, 2)) * z[:, None] * np.array([width, height]) / fx
    q = rng.normal(size=(n, 4))
    scene = GaussianScene(
        means=np.column_stack([xy, z]),
        log_scales=np.log(rng.uniform(0.03, 0.25, (n, 3))),
        rotations=q / np.linalg.norm(q, axis=1, keepdims=True),
        opacity_logits=logit(rng.uniform(0.05, 0.95, n)),
        colors=rng.uniform(0, 1, (n, 3)),
        sh1=rng.normal(scale=0.2, size=(n, 3, 3)) if sh else None,
        scene_extent=extent,
    )
    cam = Camera(fx=fx, fy=fx, cx=width / 2, cy=height / 2, world_to_camera=np.eye(4), width=width, height=height)
    return scene, cam


def with_params(params: SynthParams, **kw) -> SynthParams:
    return replace(params, **kw)
