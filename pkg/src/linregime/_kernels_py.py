"""Pure-numpy implementations of the hot kernels.

Drop-in twin of the compiled `_kernels` extension; `linregime.kernels`
selects between the two at import time. Both backends implement the same
windowing and degeneracy rules so results agree up to floating-point
summation order.
"""

from __future__ import annotations

import numpy as np

# keep candidate-projection temporaries below ~32 MB
_CHUNK_BUDGET = 4_000_000


def treated_gain_sums(covariates, gain, candidates):
    """For each candidate direction b, sum gain[i] over rows with x_i . b > 0."""
    n = covariates.shape[0]
    p = candidates.shape[0]
    out = np.empty(p, dtype=np.float64)
    chunk = max(1, _CHUNK_BUDGET // max(n, 1))
    for start in range(0, p, chunk):
        stop = min(start + chunk, p)
        proj = covariates @ candidates[start:stop].T
        out[start:stop] = gain @ (proj > 0.0)
    return out


def _nearest_index(x, lo, c):
    n = x.shape[0]
    if lo <= 0:
        return 0
    if lo >= n:
        return n - 1
    return lo - 1 if (c - x[lo - 1]) <= (x[lo] - c) else lo


def local_linear_grid(x, y, w, grid, h, cutoff=8.0):
    """Gaussian-weighted local-linear fit evaluated at ascending grid nodes.

    ``x`` must be ascending. Kernel exponents are shifted by the in-window
    minimum so tiny bandwidths do not underflow. Nodes whose local design
    is singular degrade to a local-constant estimate; nodes with an empty
    window take the nearest sample value. Returns (values, fallback_count).
    """
    n = x.shape[0]
    out = np.empty(grid.shape[0], dtype=np.float64)
    fallbacks = 0
    width = cutoff * h
    lo_idx = np.searchsorted(x, grid - width, side="left")
    hi_idx = np.searchsorted(x, grid + width, side="right")
    for j in range(grid.shape[0]):
        c = grid[j]
        lo = int(lo_idx[j])
        hi = int(hi_idx[j])
        if hi <= lo:
            out[j] = y[_nearest_index(x, lo, c)]
            fallbacks += 1
            continue
        dx = (x[lo:hi] - c) / h
        d2 = dx * dx
        kw = w[lo:hi] * np.exp(-0.5 * (d2 - d2.min()))
        s0 = kw.sum()
        s1 = (kw * dx).sum()
        s2 = (kw * d2).sum()
        ky = kw * y[lo:hi]
        t0 = ky.sum()
        t1 = (ky * dx).sum()
        det = s0 * s2 - s1 * s1
        if det > 1e-12 * s0 * s2:
            out[j] = (s2 * t0 - s1 * t1) / det
        elif s0 > 0.0:
            out[j] = t0 / s0
            fallbacks += 1
        else:
            out[j] = y[lo + int(np.argmin(np.abs(dx)))]
            fallbacks += 1
    return out, fallbacks
