"""Point-cloud and image metrics."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree


def default_voxel_size(points: np.ndarray) -> float:
    """0.5% of the bounding-box diagonal."""
    points = np.asarray(points, dtype=np.float64)
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    return 0.005 * diag if diag > 0 else 1.0


def voxel_downsample(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Keep, per occupied voxel, the point nearest the voxel centre.

    The grid is aligned to multiples of ``voxel_size``, which anchors it at the
    floor of the cloud minimum and makes the operation idempotent. Ties go to
    the lowest input index; output is in lexicographic voxel order.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points.copy()
    cell = np.floor(points / voxel_size)
    centre = (cell + 0.5) * voxel_size
    dist = np.sum((points - centre) ** 2, axis=1)
    idx = np.arange(len(points))
    order = np.lexsort((idx, dist, cell[:, 2], cell[:, 1], cell[:, 0]))
    c = cell[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(c[1:] != c[:-1], axis=1)
    return points[order[first]]


def _nearest_distances(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # candidates from the tree, exact distances recomputed with the same formula
    # a brute-force scan would use, so results agree bit-for-bit
    k = min(4, len(ref))
    _, nn = cKDTree(ref).query(query, k=k)
    nn = nn.reshape(len(query), k)
    d = np.sqrt(np.sum((query[:, None, :] - ref[nn]) ** 2, axis=2))
    return d.min(axis=1)


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Average of the two directional mean nearest-neighbour distances."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty clouds")
    return 0.5 * (float(_nearest_distances(a, b).mean()) + float(_nearest_distances(b, a).mean()))


def chamfer_distance_bruteforce(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    d = np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2))
    return 0.5 * (float(d.min(axis=1).mean()) + float(d.min(axis=0).mean()))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for unit-range images; identical images give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def mean_angular_error(pred: np.ndarray, ref: np.ndarray, mask: np.ndarray = None) -> float:
    """Mean angle in degrees between unit normal maps over pixels where both are non-zero."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    valid = np.any(pred != 0, axis=-1) & np.any(ref != 0, axis=-1)
    if mask is not None:
        valid &= mask
    if not valid.any():
        raise ValueError("no pixel has both normals defined")
    cos = np.sum(pred[valid] * ref[valid], axis=-1)
    cos /= np.linalg.norm(pred[valid], axis=-1) * np.linalg.norm(ref[valid], axis=-1)
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))).mean())
