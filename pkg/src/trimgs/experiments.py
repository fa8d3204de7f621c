"""Desk-scale experiments shared by the acceptance tests and the scripts/ drivers."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .backward import GradientStats
from .densify import DensifyConfig
from .georeg import NormalConfig, TrainConfig, TrainResult, collect_gradient_stats, train
from .metrics import chamfer_distance, default_voxel_size, mean_angular_error, voxel_downsample
from .render import render
from .synth import SynthParams, SyntheticScene, make_scene
from .trim import TrimConfig, trim_step

# noisy plane with floaters and tilted Gaussians, used by the training experiments
PLANE_PARAMS = SynthParams(position_noise=0.03, scale_inflation=1.5, floater_rate=0.1,
                           n_gaussians=300, rotation_noise=0.5)
PLANE_TAU = 0.1
# at 64 px a Gaussian covers several pixels of constant median depth; a 9 px
# window spans those plateaus
PLANE_NORMALS = NormalConfig(window=9)

CHECKER_STATS_PARAMS = SynthParams(size=4.0, camera_radius=12.0, n_gaussians=200, thickness=1.0,
                                   scale_jitter=0.7, n_views=3, frequency=4)


def plane_scene(seed: int = 0, params: SynthParams = PLANE_PARAMS):
    return make_scene("plane", params, seed=seed)


def center_chamfer(scene_means: np.ndarray, syn: SyntheticScene, voxel: Optional[float] = None) -> float:
    v = default_voxel_size(syn.gt_points) if voxel is None else voxel
    return chamfer_distance(voxel_downsample(scene_means, v), voxel_downsample(syn.gt_points, v))


def normal_error(scene, syn: SyntheticScene) -> float:
    """Mean angular error (degrees) of the rendered normal map against ray-cast truth, over views."""
    return float(np.mean([mean_angular_error(render(scene, c).normal_map, syn.normal_map(c))
                          for c in syn.cameras]))


def run_training(syn: SyntheticScene, init, iterations: int = 2000, seed: int = 0, trim: bool = True,
                 densify: bool = True, normal: NormalConfig = PLANE_NORMALS,
                 densify_config: Optional[DensifyConfig] = None,
                 trim_config: Optional[TrimConfig] = None) -> TrainResult:
    return train(init, syn.cameras, syn.targets,
                 TrainConfig(iterations=iterations, trim=trim, densify=densify, seed=seed),
                 normal, densify_config or DensifyConfig(tau_s=PLANE_TAU), trim_config or TrimConfig())


@dataclass
class FloaterRemoval:
    n_floaters: int
    removed_fraction: Dict[str, float]  # per metric


def floater_removal(seed: int = 0, params: Optional[SynthParams] = None, gamma: float = 0.5) -> FloaterRemoval:
    """Share of planted floaters removed by a single trim step under each scoring metric."""
    params = params or SynthParams(floater_rate=0.1, n_gaussians=400, position_noise=0.01)
    syn, init = make_scene("plane", params, seed=seed)
    out = {}
    for metric in ("normalized", "unnormalized", "opacity_baseline"):
        _, removed = trim_step(init, syn.cameras, TrimConfig(gamma=gamma, metric=metric))
        out[metric] = float(np.isin(syn.floater_ids, removed).mean())
    return FloaterRemoval(len(syn.floater_ids), out)


def table1_direction(seed: int = 0, window: int = 300, warmup: int = 100) -> GradientStats:
    syn, init = make_scene("checkerboard", CHECKER_STATS_PARAMS, seed=seed)
    stats, _ = collect_gradient_stats(init, syn.cameras, syn.targets, window=window, warmup=warmup,
                                      train_config=TrainConfig(seed=seed), normal_config=NormalConfig())
    return stats


@dataclass
class RunSummary:
    label: str
    chamfer: float
    psnr: float
    gaussians: int
    normal_error: float
    p99_scale: float
    floaters_left: int
    seconds: float
    result: TrainResult = field(repr=False, default=None)


def summarize(label: str, res: TrainResult, syn: SyntheticScene, seconds: float) -> RunSummary:
    s = res.scene
    return RunSummary(
        label=label,
        chamfer=center_chamfer(s.means, syn),
        psnr=res.records()[-1]["psnr"],
        gaussians=len(s),
        normal_error=normal_error(s, syn),
        p99_scale=float(np.percentile(s.scales.max(axis=1), 99)),
        floaters_left=int(np.isin(syn.floater_ids, s.ids).sum()),
        seconds=seconds,
        result=res,
    )


def compare_runs(variants: Dict[str, dict], iterations: int = 2000, seed: int = 0,
                 params: SynthParams = PLANE_PARAMS) -> List[RunSummary]:
    """Train each variant (keyword overrides of :func:`run_training`) from the same initial scene."""
    syn, init = plane_scene(seed, params)
    out = []
    for label, kw in variants.items():
        t0 = time.perf_counter()
        res = run_training(syn, init, iterations=iterations, seed=seed, **kw)
        out.append(summarize(label, res, syn, time.perf_counter() - t0))
    return out


def gamma_sweep(gammas: Sequence[float] = (0.25, 0.5, 0.75), iterations: int = 2000, seed: int = 0):
    variants = {f"gamma={g:g}": {"trim_config": TrimConfig(gamma=g)} for g in gammas}
    return compare_runs(variants, iterations, seed)


def format_runs(runs: Sequence[RunSummary]) -> str:
    head = f"{'run':<16} {'CD':>9} {'PSNR':>8} {'#G':>6} {'normal err':>10} {'p99 scale':>9} {'floaters':>8} {'time s':>7}"
    lines = [head, "-" * len(head)]
    for r in runs:
        lines.append(f"{r.label:<16} {r.chamfer:9.5f} {r.psnr:8.3f} {r.gaussians:6d} {r.normal_error:10.3f} "
                     f"{r.p99_scale:9.4f} {r.floaters_left:8d} {r.seconds:7.1f}")
    return "\n".join(lines)


def with_densify_interval(interval: int) -> DensifyConfig:
    return replace(DensifyConfig(tau_s=PLANE_TAU), interval=interval)
