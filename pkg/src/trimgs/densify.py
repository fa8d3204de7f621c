"""Scale-driven splitting of oversized Gaussians."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import GaussianScene, quat_to_rotmat


@dataclass
class DensifyConfig:
    tau_s: Optional[float] = None  # None -> 0.02 * scene_extent
    split_k: int = 2
    shrink_factor: float = 1.6
    interval: int = 500

    def __post_init__(self):
        if self.tau_s is not None and not self.tau_s > 0:
            raise ValueError("tau_s must be positive")
        if self.split_k < 2:
            raise ValueError("split_k must be at least 2")
        if not self.shrink_factor > 1:
            raise ValueError("shrink_factor must exceed 1")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")

    def threshold(self, scene: GaussianScene) -> float:
        return 0.02 * scene.scene_extent if self.tau_s is None else self.tau_s


def split_oversized(scene: GaussianScene, config: Optional[DensifyConfig] = None, seed: int = 0):
    """Replace every Gaussian whose largest scale exceeds tau_s by K shrunken children.

    Untouched Gaussians keep their order and values; children are appended with
    fresh ids, positions drawn from the parent's own distribution.
    """
    config = config or DensifyConfig()
    tau = config.threshold(scene)
    big = scene.scales.max(axis=1) > tau
    n_split = int(big.sum())
    if n_split == 0:
        return scene.copy(), 0
    K = config.split_k
    parents = np.repeat(np.flatnonzero(big), K)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((len(parents), 3))
    R = quat_to_rotmat(scene.rotations[parents])
    offsets = np.einsum("nij,nj->ni", R, z * scene.scales[parents])
    children = scene.select(parents)
    children.means = scene.means[parents] + offsets
    children.log_scales = scene.log_scales[parents] - np.log(config.shrink_factor)
    children.ids = scene.next_id + np.arange(len(parents), dtype=np.int64)
    kept = scene.select(~big)
    out = GaussianScene(
        means=np.concatenate([kept.means, children.means]),
        log_scales=np.concatenate([kept.log_scales, children.log_scales]),
        rotations=np.concatenate([kept.rotations, children.rotations]),
        opacity_logits=np.concatenate([kept.opacity_logits, children.opacity_logits]),
        colors=np.concatenate([kept.colors, children.colors]),
        sh1=None if scene.sh1 is None else np.concatenate([kept.sh1, children.sh1]),
        ids=np.concatenate([kept.ids, children.ids]),
        scene_extent=scene.scene_extent,
        next_id=scene.next_id + len(parents),
    )
    return out, n_split
