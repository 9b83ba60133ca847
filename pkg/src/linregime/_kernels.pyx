# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: masked value accumulation and windowed local-linear smoothing.

The pure-numpy twin of this module is `_kernels_py`; `linregime.kernels`
picks whichever is available at import time.
"""

from libc.math cimport exp, fabs

import numpy as np

cimport numpy as cnp

cnp.import_array()


def treated_gain_sums(const double[:, ::1] covariates, const double[::1] gain, const double[:, ::1] candidates):
    """For each candidate direction b, sum gain[i] over rows with x_i . b > 0."""
    cdef Py_ssize_t n = covariates.shape[0]
    cdef Py_ssize_t l = covariates.shape[1]
    cdef Py_ssize_t p = candidates.shape[0]
    out = np.zeros(p, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef Py_ssize_t i, j, k
    cdef double proj, acc, b0, b1, b2
    if l == 2:
        for k in range(p):
            b0 = candidates[k, 0]
            b1 = candidates[k, 1]
            acc = 0.0
            for i in range(n):
                if covariates[i, 0] * b0 + covariates[i, 1] * b1 > 0.0:
                    acc += gain[i]
            out_v[k] = acc
    elif l == 3:
        for k in range(p):
            b0 = candidates[k, 0]
            b1 = candidates[k, 1]
            b2 = candidates[k, 2]
            acc = 0.0
            for i in range(n):
                if covariates[i, 0] * b0 + covariates[i, 1] * b1 + covariates[i, 2] * b2 > 0.0:
                    acc += gain[i]
            out_v[k] = acc
    else:
        for k in range(p):
            acc = 0.0
            for i in range(n):
                proj = 0.0
                for j in range(l):
                    proj += covariates[i, j] * candidates[k, j]
                if proj > 0.0:
                    acc += gain[i]
            out_v[k] = acc
    return out


def local_linear_grid(const double[::1] x, const double[::1] y, const double[::1] w,
                      const double[::1] grid, double h, double cutoff=8.0):
    """Gaussian-weighted local-linear fit evaluated at ascending grid nodes.

    ``x`` must be ascending. Kernel exponents are shifted by the in-window
    minimum so tiny bandwidths do not underflow. Nodes whose local design
    is singular degrade to a local-constant estimate; nodes with an empty
    window take the nearest sample value. Returns (values, fallback_count).
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t g = grid.shape[0]
    out = np.empty(g, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef Py_ssize_t fallbacks = 0
    cdef Py_ssize_t lo = 0, hi = 0, i, j, near
    cdef double c, width, s0, s1, s2, t0, t1, dx, d2, d2min, kw, ky, det, best
    width = cutoff * h
    for j in range(g):
        c = grid[j]
        while lo < n and x[lo] < c - width:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < n and x[hi] <= c + width:
            hi += 1
        if hi <= lo:
            if lo <= 0:
                near = 0
            elif lo >= n:
                near = n - 1
            else:
                near = lo - 1 if (c - x[lo - 1]) <= (x[lo] - c) else lo
            out_v[j] = y[near]
            fallbacks += 1
            continue
        d2min = 1e308
        for i in range(lo, hi):
            dx = (x[i] - c) / h
            d2 = dx * dx
            if d2 < d2min:
                d2min = d2
        s0 = s1 = s2 = t0 = t1 = 0.0
        for i in range(lo, hi):
            dx = (x[i] - c) / h
            d2 = dx * dx
            kw = w[i] * exp(-0.5 * (d2 - d2min))
            ky = kw * y[i]
            s0 += kw
            s1 += kw * dx
            s2 += kw * d2
            t0 += ky
            t1 += ky * dx
        det = s0 * s2 - s1 * s1
        if det > 1e-12 * s0 * s2:
            out_v[j] = (s2 * t0 - s1 * t1) / det
        elif s0 > 0.0:
            out_v[j] = t0 / s0
            fallbacks += 1
        else:
            near = lo
            best = fabs(x[lo] - c)
            for i in range(lo + 1, hi):
                if fabs(x[i] - c) < best:
                    best = fabs(x[i] - c)
                    near = i
            out_v[j] = y[near]
            fallbacks += 1
    return out, fallbacks
