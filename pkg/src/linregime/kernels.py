"""Backend selection for the hot numerical kernels.

Prefers the compiled extension and falls back to the numpy twin when the
extension is unavailable. Set LINREGIME_PURE_PYTHON=1 to force the numpy
backend (used by the benchmark and the backend-parity tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("LINREGIME_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def treated_gain_sums(covariates, gain, candidates) -> np.ndarray:
    """Sum of per-row gains over treated rows, for a batch of directions."""
    cov = np.ascontiguousarray(covariates, dtype=np.float64)
    g = np.ascontiguousarray(gain, dtype=np.float64)
    cand = np.ascontiguousarray(candidates, dtype=np.float64)
    if cand.ndim != 2 or cand.shape[1] != cov.shape[1]:
        raise ValueError("candidates must be a (p, l) matrix matching the covariate width")
    return _impl.treated_gain_sums(cov, g, cand)


def local_linear_grid(x, y, w, grid, h, cutoff: float = 8.0):
    """Local-linear smoother values at ascending grid nodes; see backends."""
    if h <= 0.0:
        raise ValueError("bandwidth must be positive")
    xs = np.ascontiguousarray(x, dtype=np.float64)
    ys = np.ascontiguousarray(y, dtype=np.float64)
    ws = np.ascontiguousarray(w, dtype=np.float64)
    gs = np.ascontiguousarray(grid, dtype=np.float64)
    return _impl.local_linear_grid(xs, ys, ws, gs, float(h), float(cutoff))
