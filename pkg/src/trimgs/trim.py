"""Blend-weight contribution scores and contribution-based trimming."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import Camera, GaussianScene, project_scene
from .render import _tile_index

METRICS = ("normalized", "unnormalized", "opacity_baseline")


@dataclass
class TrimConfig:
    gamma: float = 0.5
    top_k: int = 5
    fraction: float = 0.10
    interval: int = 1000
    metric: str = "normalized"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("trim fraction must lie in (0, 1)")
        if self.interval < 1 or self.top_k < 1:
            raise ValueError("interval and top_k must be >= 1")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {METRICS}")


@dataclass
class ViewContribution:
    raw: np.ndarray  # summed blend weights over the projected region
    normalized: np.ndarray  # pixel-averaged alpha^g T^(1-g)
    pixel_count: np.ndarray
    final_transmittance: np.ndarray


def contribution_pass(scene: GaussianScene, camera: Camera, gamma: float = 0.5) -> ViewContribution:
    """One rasterization sweep accumulating both contribution variants per Gaussian.

    The projected region of a Gaussian is every pixel where its alpha reaches the
    renderer's 1/255 floor; the sweep does not stop early, so occluded Gaussians
    still see their full region.
    """
    proj = project_scene(scene, camera)
    tiles = _tile_index(proj, scene.ids, camera)
    P = tiles.n_pairs
    p_raw = np.zeros(P)
    p_norm = np.zeros(P)
    p_count = np.zeros(P, dtype=np.int64)
    out_T = np.ones((camera.height, camera.width))
    _kernels.contribution_kernel(
        tiles.offsets, tiles.gauss, tiles.n_tx, tiles.tile_size, camera.width, camera.height,
        proj.mean2d, proj.conic, proj.opacity, float(gamma),
        p_raw, p_norm, p_count, out_T,
    )
    n = len(scene)
    raw = np.zeros(n)
    norm_sum = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    np.add.at(raw, tiles.gauss, p_raw)
    np.add.at(norm_sum, tiles.gauss, p_norm)
    np.add.at(count, tiles.gauss, p_count)
    normalized = np.divide(norm_sum, count, out=np.zeros(n), where=count > 0)
    return ViewContribution(raw, normalized, count, out_T)


def contribution_single_view_raw(scene: GaussianScene, camera: Camera):
    """Summed blend weights per Gaussian, and the pixel count of each projected region."""
    c = contribution_pass(scene, camera, gamma=1.0)
    return c.raw, c.pixel_count


def contribution_single_view_normalized(scene: GaussianScene, camera: Camera, gamma: float = 0.5):
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    c = contribution_pass(scene, camera, gamma)
    return c.normalized, c.pixel_count


def contribution_opacity_baseline(scene: GaussianScene) -> np.ndarray:
    return scene.opacities


def top_k_mean(per_view: np.ndarray, pixel_count: np.ndarray, top_k: int):
    """Mean of each column's ``top_k`` largest values among views with coverage.

    Returns the scores and the chosen view indices (padded with -1).
    """
    V, N = per_view.shape
    masked = np.where(pixel_count > 0, per_view, -np.inf)
    # stable descending sort; equal values keep ascending view order
    order = np.argsort(-masked, axis=0, kind="stable")[: min(top_k, V)]
    chosen = np.take_along_axis(masked, order, axis=0)
    covered = np.isfinite(chosen)
    n_used = covered.sum(axis=0)
    total = np.where(covered, chosen, 0.0).sum(axis=0)
    score = np.divide(total, n_used, out=np.zeros(N), where=n_used > 0)
    views = np.where(covered, order, -1)
    return score, views.T


@dataclass
class ContributionTable:
    ids: np.ndarray
    per_view: np.ndarray  # (views, gaussians)
    pixel_count: np.ndarray  # (views, gaussians)
    score: np.ndarray
    top_views: np.ndarray  # (gaussians, k), -1 where fewer views had coverage
    metric: str = "normalized"

    def write_csv(self, per_view_path, aggregate_path) -> None:
        with open(per_view_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gaussian_id", "view_id", "C_k", "pixel_count"])
            for j, gid in enumerate(self.ids):
                for k in range(self.per_view.shape[0]):
                    w.writerow([int(gid), k, repr(float(self.per_view[k, j])), int(self.pixel_count[k, j])])
        with open(aggregate_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gaussian_id", "C"])
            for gid, c in zip(self.ids, self.score):
                w.writerow([int(gid), repr(float(c))])


def contribution_multi_view(
    scene: GaussianScene, cameras: Sequence[Camera], config: Optional[TrimConfig] = None
) -> ContributionTable:
    config = config or TrimConfig()
    if not cameras:
        raise ValueError("need at least one camera")
    n = len(scene)
    if config.metric == "opacity_baseline":
        op = contribution_opacity_baseline(scene)
        return ContributionTable(scene.ids.copy(), op[None, :], np.ones((1, n), dtype=np.int64), op,
                                 np.zeros((n, 1), dtype=np.int64), config.metric)
    passes = [contribution_pass(scene, cam, config.gamma) for cam in cameras]
    field_name = "normalized" if config.metric == "normalized" else "raw"
    per_view = np.stack([getattr(p, field_name) for p in passes])
    counts = np.stack([p.pixel_count for p in passes])
    score, views = top_k_mean(per_view, counts, config.top_k)
    return ContributionTable(scene.ids.copy(), per_view, counts, score, views, config.metric)


def lowest_fraction(score: np.ndarray, ids: np.ndarray, fraction: float) -> np.ndarray:
    """Positions of the ``floor(fraction * N)`` lowest scores, ties by ascending id."""
    k = int(np.floor(fraction * len(score)))
    return np.lexsort((ids, score))[:k]


def trim_by_score(scene: GaussianScene, score: np.ndarray, fraction: float):
    """Drop the lowest-scoring fraction; returns ``(trimmed scene, removed ids)``."""
    if fraction * len(scene) < 1:
        warnings.warn(f"trim fraction {fraction} of {len(scene)} Gaussians removes nothing", RuntimeWarning)
        return scene.copy(), np.zeros(0, dtype=np.int64)
    drop = lowest_fraction(score, scene.ids, fraction)
    keep = np.ones(len(scene), dtype=bool)
    keep[drop] = False
    return scene.select(keep), np.sort(scene.ids[drop])


def trim_step(scene: GaussianScene, cameras: Sequence[Camera], config: Optional[TrimConfig] = None):
    config = config or TrimConfig()
    table = contribution_multi_view(scene, cameras, config)
    return trim_by_score(scene, table.score, config.fraction)
