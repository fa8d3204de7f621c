"""Per-tile rasterization kernels.

Each kernel runs one tile per ``prange`` iteration. A tile only writes its own
pixels and its own slice of the per-(tile, Gaussian) pair buffers, so results
never depend on the thread schedule; per-Gaussian sums are reduced afterwards
in pair order on the Python side.
"""
import math

import numpy as np
from numba import njit, prange

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
CUTOFF_POWER = -4.5


@njit(cache=True, inline="always")
def _alpha(px, py, mean2d, conic, opacity, g):
    dx = px - mean2d[g, 0]
    dy = py - mean2d[g, 1]
    power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
    if power > 0.0 or power < CUTOFF_POWER:
        return 0.0, dx, dy, False
    a = opacity[g] * math.exp(power)
    if a > ALPHA_MAX:
        return ALPHA_MAX, dx, dy, True
    return a, dx, dy, False


@njit(parallel=True, cache=True)
def forward_kernel(offsets, pair_gauss, n_tx, tile, width, height,
                   mean2d, conic, opacity, depth, feats, bg,
                   t_stop, record, cap,
                   out_feat, out_T, out_wsum, out_median, out_last,
                   rec_gauss, rec_w, rec_T, rec_count, rec_overflow):
    n_tiles = len(offsets) - 1
    nf = feats.shape[1]
    for t in prange(n_tiles):
        tx = t % n_tx
        ty = t // n_tx
        start = offsets[t]
        end = offsets[t + 1]
        for v in range(ty * tile, min((ty + 1) * tile, height)):
            for u in range(tx * tile, min((tx + 1) * tile, width)):
                px = u + 0.5
                py = v + 0.5
                T = 1.0
                wsum = 0.0
                med = 0.0
                last = start
                nrec = 0
                for k in range(start, end):
                    g = pair_gauss[k]
                    a, dx, dy, clamped = _alpha(px, py, mean2d, conic, opacity, g)
                    if a < ALPHA_MIN:
                        continue
                    w = a * T
                    if T > 0.5 and depth[g] > med:
                        med = depth[g]
                    for c in range(nf):
                        out_feat[v, u, c] += feats[g, c] * w
                    if record:
                        if nrec < cap:
                            rec_gauss[v, u, nrec] = g
                            rec_w[v, u, nrec] = w
                            rec_T[v, u, nrec] = T
                            nrec += 1
                        else:
                            rec_overflow[v, u] += 1
                    wsum += w
                    T = T * (1.0 - a)
                    last = k + 1
                    if T < t_stop:
                        break
                for c in range(3):
                    out_feat[v, u, c] += T * bg[c]
                out_T[v, u] = T
                out_wsum[v, u] = wsum
                out_median[v, u] = med
                out_last[v, u] = last
                if record:
                    rec_count[v, u] = nrec


@njit(parallel=True, cache=True)
def backward_kernel(offsets, pair_gauss, n_tx, tile, width, height,
                    mean2d, conic, opacity, feats, bg,
                    out_feat, out_last, grad_feat_img,
                    g_mean2d, g_conic, g_opacity, g_feat):
    """Accumulate gradients into per-pair buffers (index = position in pair list)."""
    n_tiles = len(offsets) - 1
    nf = feats.shape[1]
    for t in prange(n_tiles):
        tx = t % n_tx
        ty = t // n_tx
        start = offsets[t]
        prefix = np.zeros(nf)
        for v in range(ty * tile, min((ty + 1) * tile, height)):
            for u in range(tx * tile, min((tx + 1) * tile, width)):
                px = u + 0.5
                py = v + 0.5
                T = 1.0
                for c in range(nf):
                    prefix[c] = 0.0
                for k in range(start, out_last[v, u]):
                    g = pair_gauss[k]
                    a, dx, dy, clamped = _alpha(px, py, mean2d, conic, opacity, g)
                    if a < ALPHA_MIN:
                        continue
                    w = a * T
                    # dL/dalpha = sum_c g_c * (f_c T - (C_c - P_c) / (1 - a)), P includes this term
                    dl_da = 0.0
                    for c in range(nf):
                        gc = grad_feat_img[v, u, c]
                        prefix[c] += feats[g, c] * w
                        rest = out_feat[v, u, c] - prefix[c]
                        dl_da += gc * (feats[g, c] * T - rest / (1.0 - a))
                        g_feat[k, c] += gc * w
                    T = T * (1.0 - a)
                    if clamped:
                        continue
                    G = a / opacity[g]
                    g_opacity[k] += dl_da * G
                    dl_dpower = dl_da * a
                    ca = conic[g, 0]
                    cb = conic[g, 1]
                    cc = conic[g, 2]
                    g_mean2d[k, 0] += dl_dpower * (ca * dx + cb * dy)
                    g_mean2d[k, 1] += dl_dpower * (cb * dx + cc * dy)
                    g_conic[k, 0] += dl_dpower * (-0.5 * dx * dx)
                    g_conic[k, 1] += dl_dpower * (-dx * dy)
                    g_conic[k, 2] += dl_dpower * (-0.5 * dy * dy)


@njit(parallel=True, cache=True)
def contribution_kernel(offsets, pair_gauss, n_tx, tile, width, height,
                        mean2d, conic, opacity, gamma,
                        p_raw, p_norm, p_count, out_T):
    """Blend-weight contributions per pair over the full depth list (no early stop)."""
    n_tiles = len(offsets) - 1
    for t in prange(n_tiles):
        tx = t % n_tx
        ty = t // n_tx
        start = offsets[t]
        end = offsets[t + 1]
        for v in range(ty * tile, min((ty + 1) * tile, height)):
            for u in range(tx * tile, min((tx + 1) * tile, width)):
                px = u + 0.5
                py = v + 0.5
                T = 1.0
                for k in range(start, end):
                    g = pair_gauss[k]
                    a, dx, dy, clamped = _alpha(px, py, mean2d, conic, opacity, g)
                    if a < ALPHA_MIN:
                        continue
                    p_raw[k] += a * T
                    p_norm[k] += a**gamma * T ** (1.0 - gamma)
                    p_count[k] += 1
                    T = T * (1.0 - a)
                out_T[v, u] = T
