"""Depth-derived normals, the training losses, and the optimisation loop."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .backward import ParamGradients, backward_render
from .core import Camera, GaussianScene
from .densify import DensifyConfig, split_oversized
from .metrics import psnr
from .render import RenderOutput, render
from .trim import TrimConfig, trim_step

log = logging.getLogger(__name__)


@dataclass
class NormalConfig:
    window: int = 3
    pairs: str = "corners"
    color_weight: float = 1.0  # alpha_1
    normal_weight: float = 0.05  # alpha_2

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("normal window must be odd and >= 3")
        if self.color_weight < 0 or self.normal_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.pairs not in ("corners", "center"):
            raise ValueError(f"unknown tangent sampling {self.pairs!r}")


Offset = Tuple[int, int]
TangentPair = Tuple[Tuple[Offset, Offset], Tuple[Offset, Offset]]


def tangent_pairs(window: int, mode: str = "corners") -> List[TangentPair]:
    """Sampled tangent pairs as ``((from, to), (from, to))`` pixel offsets ``(du, dv)``.

    ``corners``: at each window corner, the row edge crossed with the column edge
    through it. ``center``: a single cross through the centre pixel.
    """
    h = window // 2
    if mode == "center":
        return [(((-h, 0), (h, 0)), ((0, -h), (0, h)))]
    pairs = []
    for cu, cv in ((-h, -h), (h, -h), (h, h), (-h, h)):
        pairs.append((((-h, cv), (h, cv)), ((cu, -h), (cu, h))))
    return pairs


def backproject(depth: np.ndarray, camera: Camera) -> np.ndarray:
    """Camera-space points for every pixel centre at the given z-depth."""
    H, W = depth.shape
    u = np.arange(W) + 0.5
    v = np.arange(H) + 0.5
    x = (u[None, :] - camera.cx) / camera.fx * depth
    y = (v[:, None] - camera.cy) / camera.fy * depth
    return np.stack([x, y, depth], axis=-1)


def depth_to_normal(depth: np.ndarray, camera: Camera, config: Optional[NormalConfig] = None,
                    pairs: Optional[Sequence[TangentPair]] = None) -> np.ndarray:
    """Camera-space normal map from a z-depth map (0 marks undefined depth).

    Each pixel averages the cross products of the sampled tangent pairs in its
    window and flips the result to face the camera. Windows that touch the image
    border or a zero depth produce the zero vector.
    """
    config = config or NormalConfig()
    pairs = tangent_pairs(config.window, config.pairs) if pairs is None else pairs
    H, W = depth.shape
    h = config.window // 2
    normals = np.zeros((H, W, 3))
    if H < config.window or W < config.window:
        return normals
    P = backproject(depth, camera)
    # pad by h so every shifted view has shape (H, W)
    Pp = np.pad(P, ((h, h), (h, h), (0, 0)))

    def at(du, dv):
        return Pp[h + dv : h + dv + H, h + du : h + du + W]

    acc = np.zeros((H, W, 3))
    for (a0, a1), (b0, b1) in pairs:
        t1 = at(*a1) - at(*a0)
        t2 = at(*b1) - at(*b0)
        acc += np.cross(t1, t2)
    acc /= len(pairs)
    facing = np.sum(acc * P, axis=-1) > 0
    acc[facing] *= -1.0
    norm = np.linalg.norm(acc, axis=-1)
    ok = np.zeros((H, W), dtype=bool)
    window_min = sliding_window_view(depth, (config.window, config.window)).min(axis=(2, 3))
    ok[h : H - h, h : W - h] = window_min > 0
    ok &= norm > 1e-12
    normals[ok] = acc[ok] / norm[ok, None]
    return normals


def _valid_normals(n_d: np.ndarray, n_g: np.ndarray) -> np.ndarray:
    return np.any(n_d != 0, axis=-1) & np.any(n_g != 0, axis=-1)


def normal_consistency_loss(n_d: np.ndarray, n_g: np.ndarray) -> float:
    """Mean over pixels where both maps are non-zero of ``sum_c |n_d - n_g|``."""
    if n_d.shape != n_g.shape:
        raise ValueError("normal maps differ in shape")
    valid = _valid_normals(n_d, n_g)
    if not valid.any():
        warnings.warn("no pixel has both normals defined; normal loss is 0", RuntimeWarning)
        return 0.0
    return float(np.abs(n_d - n_g)[valid].sum(axis=-1).mean())


@dataclass
class LossTerms:
    loss: float
    color_l1: float
    normal_l1: float
    grad_color: np.ndarray
    grad_normal: np.ndarray
    depth_normals: np.ndarray


def total_loss(out: RenderOutput, target: np.ndarray, camera: Camera,
               config: Optional[NormalConfig] = None) -> LossTerms:
    """``color_weight * L1(color) + normal_weight * |N_D - N_G|_1`` and its image gradients.

    The depth-derived normals are a constant target: no gradient reaches the
    median depth.
    """
    config = config or NormalConfig()
    if out.color.shape != target.shape:
        raise ValueError(f"render {out.color.shape} and target {target.shape} differ")
    diff = out.color - target
    color_l1 = float(np.abs(diff).mean())
    grad_color = config.color_weight * np.sign(diff) / diff.size

    n_d = depth_to_normal(out.median_depth, camera, config)
    n_g = out.normal_map
    valid = _valid_normals(n_d, n_g)
    grad_normal = np.zeros_like(n_g)
    normal_l1 = 0.0
    if valid.any():
        nd = np.abs(n_d - n_g)[valid].sum(axis=-1)
        normal_l1 = float(nd.mean())
        grad_normal[valid] = config.normal_weight * np.sign(n_g - n_d)[valid] / valid.sum()
    loss = config.color_weight * color_l1 + config.normal_weight * normal_l1
    return LossTerms(loss, color_l1, normal_l1, grad_color, grad_normal, n_d)


@dataclass
class TrainConfig:
    iterations: int = 7000
    trim: bool = True
    densify: bool = True
    log_interval: int = 500
    lr_position: Optional[float] = None  # None -> 1.6e-4 * scene_extent
    lr_position_final_factor: float = 0.01
    lr_color: float = 2.5e-3
    lr_sh1: float = 1.25e-4
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    seed: int = 0
    dump_dir: Optional[str] = None

    def __post_init__(self):
        if self.iterations < 0 or self.log_interval < 1:
            raise ValueError("iterations must be >= 0 and log_interval >= 1")
        for name in ("lr_color", "lr_sh1", "lr_opacity", "lr_scale", "lr_rotation"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_position is not None and not self.lr_position > 0:
            raise ValueError("lr_position must be positive")


class Adam:
    """Per-parameter-class Adam whose moments follow Gaussians through trims and splits."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-15):
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.ids: Optional[np.ndarray] = None

    def _sync(self, scene: GaussianScene) -> None:
        if self.ids is None or np.array_equal(self.ids, scene.ids):
            self.ids = scene.ids.copy()
            return
        # carry state over by id; unseen ids start from zero moments
        order = np.argsort(self.ids)
        pos = np.searchsorted(self.ids, scene.ids, sorter=order)
        pos = np.minimum(pos, len(order) - 1)
        src = order[pos]
        found = self.ids[src] == scene.ids
        for store in (self.m, self.v):
            for name, arr in store.items():
                new = np.zeros((len(scene),) + arr.shape[1:])
                new[found] = arr[src[found]]
                store[name] = new
        self.ids = scene.ids.copy()

    def step(self, scene: GaussianScene, grads: ParamGradients, lrs: Dict[str, float]) -> None:
        self._sync(scene)
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**t)
            vhat = v / (1 - self.b2**t)
            getattr(scene, name)[:] -= lrs[name] * mhat / (np.sqrt(vhat) + self.eps)


class NumericalAbort(RuntimeError):
    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class TrainResult:
    scene: GaussianScene
    log: List[dict] = field(default_factory=list)

    def records(self, kind: str = "metrics") -> List[dict]:
        return [r for r in self.log if r.get("event", "metrics") == kind]

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def mean_psnr(scene: GaussianScene, cameras: Sequence[Camera], targets: Sequence[np.ndarray]) -> float:
    return float(np.mean([psnr(np.clip(render(scene, c).color, 0, 1), t) for c, t in zip(cameras, targets)]))


def _learning_rates(cfg: TrainConfig, scene: GaussianScene, it: int) -> Dict[str, float]:
    base = 1.6e-4 * scene.scene_extent if cfg.lr_position is None else cfg.lr_position
    frac = min(it / max(cfg.iterations, 1), 1.0)
    return {
        "means": base * cfg.lr_position_final_factor**frac,
        "colors": cfg.lr_color,
        "sh1": cfg.lr_sh1,
        "opacity_logits": cfg.lr_opacity,
        "log_scales": cfg.lr_scale,
        "rotations": cfg.lr_rotation,
    }


def _abort(cfg: TrainConfig, scene: GaussianScene, it: int, what: str):
    dump = None
    if cfg.dump_dir:
        from .io import write_scene_ply

        Path(cfg.dump_dir).mkdir(parents=True, exist_ok=True)
        dump = str(Path(cfg.dump_dir) / f"abort_iter{it:06d}.ply")
        write_scene_ply(dump, scene)
    raise NumericalAbort(f"non-finite {what} at iteration {it}", dump)


def train(
    scene: GaussianScene,
    cameras: Sequence[Camera],
    targets: Sequence[np.ndarray],
    train_config: Optional[TrainConfig] = None,
    normal_config: Optional[NormalConfig] = None,
    densify_config: Optional[DensifyConfig] = None,
    trim_config: Optional[TrimConfig] = None,
    grad_norm_sum: Optional[np.ndarray] = None,
) -> TrainResult:
    """Round-robin single-view optimisation with periodic splitting and trimming.

    When ``grad_norm_sum`` is given it must be a zero array of length
    ``len(scene)``; it accumulates the per-Gaussian position-gradient norm each
    iteration (only valid while neither splitting nor trimming reshapes the scene).
    """
    cfg = train_config or TrainConfig()
    ncfg = normal_config or NormalConfig()
    dcfg = densify_config or DensifyConfig()
    tcfg = trim_config or TrimConfig()
    if not cameras or len(cameras) != len(targets):
        raise ValueError("need one target per camera and at least one view")
    scene = scene.copy()
    opt = Adam()
    result = TrainResult(scene)
    window = {"loss": 0.0, "L_c": 0.0, "normal_loss": 0.0, "n": 0}

    def log_metrics(it: int):
        n = max(window["n"], 1)
        rec = {
            "iteration": it,
            "loss": window["loss"] / n,
            "L_c": window["L_c"] / n,
            "normal_loss": window["normal_loss"] / n,
            "psnr": mean_psnr(scene, cameras, targets),
            "gaussian_count": len(scene),
        }
        result.log.append(rec)
        log.info("iter %d loss %.5f psnr %.3f n=%d", it, rec["loss"], rec["psnr"], len(scene))
        window.update(loss=0.0, L_c=0.0, normal_loss=0.0, n=0)

    log_metrics(0)
    for it in range(1, cfg.iterations + 1):
        k = (it - 1) % len(cameras)
        cam = cameras[k]
        out = render(scene, cam)
        terms = total_loss(out, targets[k], cam, ncfg)
        if not math.isfinite(terms.loss):
            _abort(cfg, scene, it, "loss")
        grads = backward_render(scene, cam, terms.grad_color,
                                terms.grad_normal if ncfg.normal_weight > 0 else None, out)
        if not grads.all_finite():
            _abort(cfg, scene, it, "gradient")
        if grad_norm_sum is not None:
            grad_norm_sum += np.linalg.norm(grads.means, axis=1)
        opt.step(scene, grads, _learning_rates(cfg, scene, it))
        scene.normalize_rotations()
        window["loss"] += terms.loss
        window["L_c"] += terms.color_l1
        window["normal_loss"] += terms.normal_l1
        window["n"] += 1

        # the window's metrics describe the optimised state, before this
        # iteration's structural events; event records carry the state after
        if it % cfg.log_interval == 0:
            log_metrics(it)
        if cfg.densify and it % dcfg.interval == 0:
            scene, n_split = split_oversized(scene, dcfg, seed=cfg.seed * 1_000_003 + it)
            result.log.append({"iteration": it, "event": "densify", "split": n_split,
                               "gaussian_count": len(scene),
                               "psnr_after": mean_psnr(scene, cameras, targets)})
        if cfg.trim and it % tcfg.interval == 0:
            before = len(scene)
            scene, removed = trim_step(scene, cameras, tcfg)
            result.log.append({"iteration": it, "event": "trim", "removed": len(removed),
                               "gaussian_count": len(scene), "before": before,
                               "psnr_after": mean_psnr(scene, cameras, targets)})
        result.scene = scene
    result.scene = scene
    return result


def collect_gradient_stats(
    scene: GaussianScene,
    cameras: Sequence[Camera],
    targets: Sequence[np.ndarray],
    window: int = 300,
    warmup: int = 0,
    train_config: Optional[TrainConfig] = None,
    normal_config: Optional[NormalConfig] = None,
):
    """Optimise for ``warmup`` iterations, then bucket position gradients over ``window`` more.

    Splitting and trimming stay off so every Gaussian is tracked for the whole window.
    Returns ``(GradientStats, scene at the end of the window)``.
    """
    from .backward import accumulate_gradient_stats
    from dataclasses import replace

    base = replace(train_config or TrainConfig(), trim=False, densify=False)
    if warmup > 0:
        scene = train(scene, cameras, targets, replace(base, iterations=warmup), normal_config).scene
    acc = np.zeros(len(scene))
    res = train(scene, cameras, targets, replace(base, iterations=window, log_interval=max(window, 1)),
                normal_config, grad_norm_sum=acc)
    return accumulate_gradient_stats(res.scene, acc, window), res.scene
