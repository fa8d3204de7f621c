"""Tiled forward rasterizer and its brute-force reference."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .core import ALPHA_MAX, CUTOFF_POWER, Camera, GaussianScene, ProjectedScene, project_scene

TILE_SIZE = 16
T_STOP = 1e-4
ALPHA_MIN = _kernels.ALPHA_MIN
RECORD_CAP = 64
NORMAL_EPS = 1e-6


@dataclass
class TileIndex:
    """Per-tile depth-sorted Gaussian lists, stored CSR-style.

    ``gauss[offsets[t]:offsets[t + 1]]`` are the scene indices overlapping tile ``t``
    (row-major tile order), ascending in camera depth with id tie-break.
    """

    tile_size: int
    n_tx: int
    n_ty: int
    offsets: np.ndarray
    gauss: np.ndarray

    def tile_list(self, tx: int, ty: int) -> np.ndarray:
        t = ty * self.n_tx + tx
        return self.gauss[self.offsets[t] : self.offsets[t + 1]]

    @property
    def n_pairs(self) -> int:
        return len(self.gauss)


def screen_bbox(proj: ProjectedScene):
    """Axis-aligned bounds of each 3-sigma ellipse (exact for the Mahalanobis cutoff)."""
    radius = np.sqrt(-2.0 * CUTOFF_POWER)
    ex = radius * np.sqrt(proj.cov2d[:, 0, 0])
    ey = radius * np.sqrt(proj.cov2d[:, 1, 1])
    return proj.mean2d[:, 0] - ex, proj.mean2d[:, 0] + ex, proj.mean2d[:, 1] - ey, proj.mean2d[:, 1] + ey


def _tile_index(proj: ProjectedScene, ids: np.ndarray, camera: Camera, tile: int = TILE_SIZE) -> TileIndex:
    n_tx = -(-camera.width // tile)
    n_ty = -(-camera.height // tile)
    x0, x1, y0, y1 = screen_bbox(proj)
    keep = proj.valid & (x1 >= 0) & (x0 < camera.width) & (y1 >= 0) & (y0 < camera.height)
    idx = np.flatnonzero(keep)
    tx0 = np.clip(np.floor(x0[idx] / tile), 0, n_tx - 1).astype(np.int64)
    tx1 = np.clip(np.floor(x1[idx] / tile), 0, n_tx - 1).astype(np.int64)
    ty0 = np.clip(np.floor(y0[idx] / tile), 0, n_ty - 1).astype(np.int64)
    ty1 = np.clip(np.floor(y1[idx] / tile), 0, n_ty - 1).astype(np.int64)
    wx = tx1 - tx0 + 1
    counts = wx * (ty1 - ty0 + 1)
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(idx)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tiles = (ty0[owner] + local // wx[owner]) * n_tx + tx0[owner] + local % wx[owner]
    gauss = idx[owner]
    order = np.lexsort((ids[gauss], proj.depth[gauss], tiles))
    tiles = tiles[order]
    offsets = np.searchsorted(tiles, np.arange(n_tx * n_ty + 1)).astype(np.int64)
    return TileIndex(tile, n_tx, n_ty, offsets, gauss[order].astype(np.int64))


def build_tile_index(scene: GaussianScene, camera: Camera) -> TileIndex:
    return _tile_index(project_scene(scene, camera), scene.ids, camera)


@dataclass
class RenderOptions:
    background: tuple = (0.0, 0.0, 0.0)
    early_stop: bool = True
    records: bool = False
    record_cap: int = RECORD_CAP


@dataclass
class WeightRecords:
    """Per-pixel blend records in compositing order; entries past ``count`` are unused."""

    gaussian_id: np.ndarray  # (H, W, cap) persistent ids, -1 when unused
    weight: np.ndarray
    transmittance: np.ndarray
    count: np.ndarray
    overflow: np.ndarray  # dropped records per pixel

    def pixel(self, v: int, u: int):
        n = self.count[v, u]
        return list(zip(self.gaussian_id[v, u, :n].tolist(), self.weight[v, u, :n].tolist(),
                        self.transmittance[v, u, :n].tolist()))


@dataclass
class RenderOutput:
    color: np.ndarray
    median_depth: np.ndarray
    normal_map: np.ndarray
    final_transmittance: np.ndarray
    weight_sum: np.ndarray
    weight_records: Optional[WeightRecords] = None
    # state reused by the backward pass
    proj: Optional[ProjectedScene] = field(default=None, repr=False)
    tiles: Optional[TileIndex] = field(default=None, repr=False)
    raw_features: Optional[np.ndarray] = field(default=None, repr=False)
    last: Optional[np.ndarray] = field(default=None, repr=False)
    background: Optional[np.ndarray] = field(default=None, repr=False)


def normalize_normals(raw: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    return np.where(norm > NORMAL_EPS, raw / np.maximum(norm, NORMAL_EPS), 0.0)


def render(scene: GaussianScene, camera: Camera, options: Optional[RenderOptions] = None) -> RenderOutput:
    options = options or RenderOptions()
    proj = project_scene(scene, camera)
    tiles = _tile_index(proj, scene.ids, camera)
    H, W = camera.height, camera.width
    feats = np.ascontiguousarray(np.concatenate([proj.colors, proj.normal], axis=1))
    bg = np.asarray(options.background, dtype=np.float64)
    out_feat = np.zeros((H, W, feats.shape[1]))
    out_T = np.zeros((H, W))
    out_wsum = np.zeros((H, W))
    out_med = np.zeros((H, W))
    out_last = np.zeros((H, W), dtype=np.int64)
    cap = options.record_cap if options.records else 1
    shape = (H, W, cap) if options.records else (1, 1, 1)
    rec_g = np.full(shape, -1, dtype=np.int64)
    rec_w = np.zeros(shape)
    rec_T = np.zeros(shape)
    rec_n = np.zeros(shape[:2], dtype=np.int64)
    rec_over = np.zeros(shape[:2], dtype=np.int64)
    _kernels.forward_kernel(
        tiles.offsets, tiles.gauss, tiles.n_tx, tiles.tile_size, W, H,
        proj.mean2d, proj.conic, proj.opacity, proj.depth, feats, bg,
        T_STOP if options.early_stop else -1.0, options.records, cap,
        out_feat, out_T, out_wsum, out_med, out_last,
        rec_g, rec_w, rec_T, rec_n, rec_over,
    )
    records = None
    if options.records:
        ids = np.where(rec_g >= 0, scene.ids[np.maximum(rec_g, 0)], -1)
        records = WeightRecords(ids, rec_w, rec_T, rec_n, rec_over)
    return RenderOutput(
        color=out_feat[..., :3].copy(),
        median_depth=out_med,
        normal_map=normalize_normals(out_feat[..., 3:]),
        final_transmittance=out_T,
        weight_sum=out_wsum,
        weight_records=records,
        proj=proj,
        tiles=tiles,
        raw_features=out_feat,
        last=out_last,
        background=bg,
    )


def pixel_grid(camera: Camera):
    u = np.arange(camera.width) + 0.5
    v = np.arange(camera.height) + 0.5
    return np.meshgrid(u, v)


def alpha_image(proj: ProjectedScene, i: int, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Full-image alpha of Gaussian ``i`` with the renderer's clamp, cutoff and floor."""
    K = np.linalg.inv(proj.cov2d[i])
    dx = px - proj.mean2d[i, 0]
    dy = py - proj.mean2d[i, 1]
    power = -0.5 * (K[0, 0] * dx * dx + 2 * K[0, 1] * dx * dy + K[1, 1] * dy * dy)
    a = np.minimum(proj.opacity[i] * np.exp(power), ALPHA_MAX)
    a[(power < CUTOFF_POWER) | (power > 0)] = 0.0
    a[a < ALPHA_MIN] = 0.0
    return a


def depth_order(scene: GaussianScene, proj: ProjectedScene) -> np.ndarray:
    idx = np.flatnonzero(proj.valid)
    return idx[np.lexsort((scene.ids[idx], proj.depth[idx]))]


def render_reference(scene: GaussianScene, camera: Camera, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Per-pixel compositing over every Gaussian: no tiles, no early termination."""
    proj = project_scene(scene, camera)
    px, py = pixel_grid(camera)
    color = np.zeros((camera.height, camera.width, 3))
    T = np.ones((camera.height, camera.width))
    for i in depth_order(scene, proj):
        a = alpha_image(proj, i, px, py)
        color += (a * T)[..., None] * proj.colors[i]
        T *= 1.0 - a
    return color + T[..., None] * np.asarray(background, dtype=np.float64)
