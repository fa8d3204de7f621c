"""Gaussian primitives, cameras and the closed-form math shared by every stage.

Positions live in world units, image coordinates in pixels with pixel ``(u, v)``
centred at ``(u + 0.5, v + 0.5)``. Cameras follow the OpenCV convention:
x right, y down, +z along the viewing direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ALPHA_MAX = 0.99
CUTOFF_POWER = -4.5  # 3-sigma Mahalanobis radius
LOWPASS = 0.3  # px^2 added to the projected covariance diagonal
NEAR_FRACTION = 0.01
SH_C1 = 0.4886025119029199


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from quaternions ``(w, x, y, z)``; accepts ``(4,)`` or ``(N, 4)``.

    The quaternions are normalised first.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat` for a single matrix, ``w >= 0``."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def covariance_from_params(log_scale, rotation) -> np.ndarray:
    """``R diag(exp(log_scale)^2) R^T``; batched over a leading axis if given."""
    log_scale = np.asarray(log_scale, dtype=np.float64)
    R = quat_to_rotmat(rotation)
    s2 = np.exp(2.0 * log_scale)
    if log_scale.ndim == 1:
        return (R * s2) @ R.T
    return np.einsum("nij,nj,nkj->nik", R, s2, R)


def eval_gaussian_alpha(p, proj: "Projected2D", opacity: float) -> float:
    """Unnormalised 2D Gaussian query clamped to ``ALPHA_MAX``; zero beyond 3 sigma.

    Raises ``ValueError`` when the projected covariance is degenerate, which the
    renderer treats as "skip this Gaussian in this view".
    """
    cov = np.asarray(proj.cov2d, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not det > 0:
        raise ValueError("degenerate projected covariance")
    d = np.asarray(p, dtype=np.float64) - proj.mean2d
    power = -0.5 * d @ np.linalg.solve(cov, d)
    if power < CUTOFF_POWER:
        return 0.0
    return float(min(opacity * np.exp(power), ALPHA_MAX))


def eval_gaussian_pdf_3d(x, mu, cov) -> float:
    """Normalised trivariate normal density. Non-PD ``cov`` raises ``ValueError``."""
    cov = np.asarray(cov, dtype=np.float64)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    d = np.linalg.solve(L, np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64))
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(np.exp(-0.5 * d @ d - 0.5 * logdet - 1.5 * np.log(2 * np.pi)))


@dataclass(frozen=True)
class Gaussian:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color: np.ndarray
    sh1: Optional[np.ndarray] = None  # (3 channels, 3 coefficients)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_params(self.log_scale, self.rotation)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        w2c = np.asarray(self.world_to_camera, dtype=np.float64)
        if w2c.shape != (4, 4):
            raise ValueError("world_to_camera must be 4x4")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        R = w2c[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValueError("world_to_camera rotation is not orthonormal")
        w2c.setflags(write=False)
        object.__setattr__(self, "world_to_camera", w2c)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, fx, fy=None, width, height, cx=None, cy=None):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        w2c = np.eye(4)
        w2c[:3, :3] = R
        w2c[:3, 3] = -R @ eye
        return cls(
            fx=fx,
            fy=fx if fy is None else fy,
            cx=width / 2 if cx is None else cx,
            cy=height / 2 if cy is None else cy,
            world_to_camera=w2c,
            width=width,
            height=height,
        )


@dataclass
class Projected2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    normal_cam: np.ndarray


@dataclass
class GaussianScene:
    """Struct-of-arrays storage for an ordered set of Gaussians.

    ``ids`` are persistent identifiers: they survive trimming and reordering and
    are used for deterministic tie-breaking everywhere.
    """

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    scene_extent: float
    sh1: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None
    next_id: int = field(default=-1)

    def __post_init__(self):
        self.means = np.array(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.log_scales = np.array(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.array(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.array(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.array(self.colors, dtype=np.float64).reshape(n, 3)
        if self.sh1 is not None:
            self.sh1 = np.array(self.sh1, dtype=np.float64).reshape(n, 3, 3)
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        else:
            self.ids = np.array(self.ids, dtype=np.int64).reshape(n)
        if self.next_id < 0:
            self.next_id = int(self.ids.max()) + 1 if n else 0
        if not self.scene_extent > 0:
            raise ValueError("scene_extent must be positive")

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian], scene_extent: Optional[float] = None):
        if not gaussians:
            raise ValueError("a scene needs at least one Gaussian")
        means = np.stack([g.position for g in gaussians])
        has_sh = any(g.sh1 is not None for g in gaussians)
        sh1 = None
        if has_sh:
            sh1 = np.stack([np.zeros((3, 3)) if g.sh1 is None else g.sh1 for g in gaussians])
        return cls(
            means=means,
            log_scales=np.stack([g.log_scale for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            colors=np.stack([g.color for g in gaussians]),
            sh1=sh1,
            scene_extent=bounding_radius(means) if scene_extent is None else scene_extent,
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.means[i].copy(),
            log_scale=self.log_scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i].copy(),
            sh1=None if self.sh1 is None else self.sh1[i].copy(),
        )

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def covariances(self) -> np.ndarray:
        return covariance_from_params(self.log_scales, self.rotations)

    def select(self, index) -> "GaussianScene":
        """New scene holding the Gaussians picked by ``index`` (mask or integer array)."""
        return GaussianScene(
            means=self.means[index],
            log_scales=self.log_scales[index],
            rotations=self.rotations[index],
            opacity_logits=self.opacity_logits[index],
            colors=self.colors[index],
            sh1=None if self.sh1 is None else self.sh1[index],
            ids=self.ids[index],
            scene_extent=self.scene_extent,
            next_id=self.next_id,
        )

    def copy(self) -> "GaussianScene":
        return self.select(np.arange(len(self)))

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)


def bounding_radius(points: np.ndarray) -> float:
    """Radius of the sphere around the centroid that contains every point."""
    points = np.asarray(points, dtype=np.float64)
    r = float(np.linalg.norm(points - points.mean(axis=0), axis=1).max())
    return r if r > 0 else 1.0


def shortest_axis(log_scales: np.ndarray) -> np.ndarray:
    return np.argmin(log_scales, axis=-1)


def project_gaussian(g: Gaussian, cam: Camera, scene_extent: float = 1.0) -> Optional[Projected2D]:
    """EWA projection of a single Gaussian; ``None`` when it lies behind the near plane."""
    x_c = cam.rotation @ g.position + cam.translation
    z = x_c[2]
    if z <= NEAR_FRACTION * scene_extent:
        return None
    J = np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x_c[0] / z**2],
            [0.0, cam.fy / z, -cam.fy * x_c[1] / z**2],
        ]
    )
    M = J @ cam.rotation
    cov2d = M @ g.covariance @ M.T + LOWPASS * np.eye(2)
    mean2d = np.array([cam.fx * x_c[0] / z + cam.cx, cam.fy * x_c[1] / z + cam.cy])
    R = quat_to_rotmat(g.rotation)
    n = cam.rotation @ R[:, int(np.argmin(g.log_scale))]
    if n @ x_c > 0:
        n = -n
    return Projected2D(mean2d=mean2d, cov2d=0.5 * (cov2d + cov2d.T), depth=float(z), normal_cam=n)


@dataclass
class ProjectedScene:
    """Batched projection of a scene into one camera, with the intermediates
    needed to differentiate it."""

    valid: np.ndarray
    x_cam: np.ndarray
    depth: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray  # (a, b, c) of the inverse 2D covariance
    J: np.ndarray
    M: np.ndarray
    R: np.ndarray
    scales: np.ndarray
    cov3d: np.ndarray
    normal: np.ndarray
    normal_axis: np.ndarray
    normal_sign: np.ndarray
    colors: np.ndarray
    view_dirs: np.ndarray
    view_dist: np.ndarray
    opacity: np.ndarray


def view_colors(scene: GaussianScene, cam: Camera):
    """Per-Gaussian RGB seen from ``cam``: base colour plus the degree-1 term."""
    offset = scene.means - cam.center
    dist = np.linalg.norm(offset, axis=1)
    dirs = offset / np.maximum(dist, 1e-12)[:, None]
    colors = scene.colors.copy()
    if scene.sh1 is not None:
        basis = SH_C1 * np.stack([-dirs[:, 1], dirs[:, 2], -dirs[:, 0]], axis=1)
        colors += np.einsum("nck,nk->nc", scene.sh1, basis)
    return colors, dirs, dist


def project_scene(scene: GaussianScene, cam: Camera) -> ProjectedScene:
    W = cam.rotation
    x_c = scene.means @ W.T + cam.translation
    z = x_c[:, 2]
    valid = z > NEAR_FRACTION * scene.scene_extent
    zs = np.where(valid, z, 1.0)
    n = len(scene)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x_c[:, 0] / zs**2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * x_c[:, 1] / zs**2
    M = J @ W
    R = quat_to_rotmat(scene.rotations)
    scales = np.exp(scene.log_scales)
    cov3d = np.einsum("nij,nj,nkj->nik", R, scales**2, R)
    cov2d = M @ cov3d @ M.transpose(0, 2, 1)
    cov2d = 0.5 * (cov2d + cov2d.transpose(0, 2, 1))
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    valid &= np.isfinite(det) & (det > 0)
    safe_det = np.where(valid, det, 1.0)
    conic = np.stack([cov2d[:, 1, 1], -cov2d[:, 0, 1], cov2d[:, 0, 0]], axis=1) / safe_det[:, None]
    mean2d = np.stack([cam.fx * x_c[:, 0] / zs + cam.cx, cam.fy * x_c[:, 1] / zs + cam.cy], axis=1)

    axis = shortest_axis(scene.log_scales)
    normal = np.einsum("ij,nj->ni", W, R[np.arange(n), :, axis])
    sign = np.where(np.einsum("ni,ni->n", normal, x_c) > 0, -1.0, 1.0)
    normal *= sign[:, None]
    colors, dirs, dist = view_colors(scene, cam)
    return ProjectedScene(
        valid=valid,
        x_cam=x_c,
        depth=z,
        mean2d=mean2d,
        cov2d=cov2d,
        conic=conic,
        J=J,
        M=M,
        R=R,
        scales=scales,
        cov3d=cov3d,
        normal=normal,
        normal_axis=axis,
        normal_sign=sign,
        colors=colors,
        view_dirs=dirs,
        view_dist=dist,
        opacity=sigmoid(scene.opacity_logits),
    )
