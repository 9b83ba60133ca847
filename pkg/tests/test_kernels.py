"""Backend parity and contract tests for the hot kernels."""

import numpy as np
import pytest

from linregime import _kernels_py
from linregime import kernels

try:
    from linregime import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])


def _naive_gain_sums(x, gain, cands):
    out = np.zeros(cands.shape[0])
    for k in range(cands.shape[0]):
        for i in range(x.shape[0]):
            if float(np.dot(x[i], cands[k])) > 0.0:
                out[k] += gain[i]
    return out


@pytest.mark.parametrize("name,impl", BACKENDS)
@pytest.mark.parametrize("l", [1, 2, 3, 5])
def test_treated_gain_sums_matches_naive(name, impl, l, rng):
    x = np.ascontiguousarray(rng.normal(size=(80, l)))
    gain = np.ascontiguousarray(rng.normal(size=80))
    cands = rng.normal(size=(13, l))
    cands = np.ascontiguousarray(cands / np.linalg.norm(cands, axis=1)[:, None])
    out = impl.treated_gain_sums(x, gain, cands)
    np.testing.assert_allclose(out, _naive_gain_sums(x, gain, cands), rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(_compiled is None, reason="compiled extension not built")
def test_backend_parity_gain_sums(rng):
    x = np.ascontiguousarray(rng.normal(size=(500, 3)))
    gain = np.ascontiguousarray(rng.normal(size=500))
    cands = rng.normal(size=(64, 3))
    cands = np.ascontiguousarray(cands / np.linalg.norm(cands, axis=1)[:, None])
    a = _kernels_py.treated_gain_sums(x, gain, cands)
    b = _compiled.treated_gain_sums(x, gain, cands)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(_compiled is None, reason="compiled extension not built")
def test_backend_parity_local_linear(rng):
    n = 400
    x = np.sort(rng.uniform(-1, 3, n))
    y = np.cos(x) + 0.05 * rng.normal(size=n)
    w = rng.uniform(0.5, 2.0, n)
    grid = np.linspace(x[0], x[-1], 101)
    for h in (0.05, 0.3, 1.5):
        va, fa = _kernels_py.local_linear_grid(x, y, w, grid, h)
        vb, fb = _compiled.local_linear_grid(x, y, w, grid, h)
        np.testing.assert_allclose(va, vb, rtol=1e-9, atol=1e-12)
        assert fa == fb


@pytest.mark.parametrize("name,impl", BACKENDS)
@pytest.mark.parametrize("h", [1e-2, 0.1, 1.0, 10.0])
def test_local_linear_reproduces_affine(name, impl, h, rng):
    # exact for affine targets at any sane bandwidth
    n = 60
    x = np.sort(rng.uniform(0.0, 1.0, n))
    y = 3.0 - 2.0 * x
    grid = np.linspace(x[0], x[-1], 201)
    vals, _ = impl.local_linear_grid(x, y, np.ones(n), grid, h)
    np.testing.assert_allclose(vals, 3.0 - 2.0 * grid, atol=1e-8)


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_local_linear_singular_design_falls_back(name, impl):
    # every sample at one location: local-constant fallback, value = mean
    x = np.full(10, 2.0)
    y = np.arange(10.0)
    grid = np.array([2.0])
    vals, fallbacks = impl.local_linear_grid(x, y, np.ones(10), grid, 0.5)
    assert fallbacks >= 1
    np.testing.assert_allclose(vals, [y.mean()], atol=1e-12)


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_local_linear_empty_window_uses_nearest(name, impl):
    x = np.array([0.0, 10.0])
    y = np.array([1.0, 5.0])
    grid = np.array([0.0, 4.9, 5.1, 10.0])
    vals, fallbacks = impl.local_linear_grid(x, y, np.ones(2), grid, 0.01)
    assert fallbacks >= 2
    assert vals[1] == 1.0 and vals[2] == 5.0


def test_selector_exposes_backend():
    assert kernels.BACKEND in ("cython", "python")
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = kernels.treated_gain_sums(x, np.array([1.0, 2.0]), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(out, [1.0])


def test_selector_rejects_bad_bandwidth():
    with pytest.raises(ValueError):
        kernels.local_linear_grid(np.array([0.0]), np.array([0.0]), np.array([1.0]), np.array([0.0]), 0.0)
