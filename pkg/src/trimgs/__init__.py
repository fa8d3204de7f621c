"""Gaussian splatting geometry toolkit: tiled differentiable rasterization,
contribution-based trimming, scale-driven splitting and depth-normal regularization."""
import os

# the bundled TBB is too old for numba; pick a layer that always works
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .core import Camera, Gaussian, GaussianScene, Projected2D  # noqa: E402

__all__ = ["Camera", "Gaussian", "GaussianScene", "Projected2D"]
__version__ = "0.1.0"
