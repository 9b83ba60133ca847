"""Benchmark the compiled kernels against the pure-numpy fallback.

Run from the repo root after building the extension:

    python3 benchmarks/bench_kernels.py

Times the two hot loops (value accumulation over candidate directions and
the windowed local-linear smoother) on both backends, plus one end-to-end
policy search per backend.
"""

from __future__ import annotations

import time

import numpy as np

from linregime import _kernels_py

try:
    from linregime import _kernels as _compiled
except ImportError:
    _compiled = None


def _time(fn, repeats=5):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_treated_gain_sums(n=20000, l=3, p=200, seed=0):
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(rng.normal(size=(n, l)))
    gain = np.ascontiguousarray(rng.normal(size=n))
    cands = rng.normal(size=(p, l))
    cands = np.ascontiguousarray(cands / np.linalg.norm(cands, axis=1)[:, None])
    rows = []
    t_py = _time(lambda: _kernels_py.treated_gain_sums(x, gain, cands))
    rows.append(("python", t_py))
    if _compiled is not None:
        t_cy = _time(lambda: _compiled.treated_gain_sums(x, gain, cands))
        rows.append(("cython", t_cy))
        ref = _kernels_py.treated_gain_sums(x, gain, cands)
        out = _compiled.treated_gain_sums(x, gain, cands)
        assert np.allclose(ref, out, rtol=1e-10), "backend mismatch"
    return "treated_gain_sums(n=%d, l=%d, p=%d)" % (n, l, p), rows


def bench_local_linear(n=20000, grid=401, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-2, 2, n))
    y = np.sin(x) + 0.1 * rng.normal(size=n)
    w = np.ones(n)
    g = np.linspace(x[0], x[-1], grid)
    h = 1.06 * x.std() * n ** (-0.2)
    rows = []
    t_py = _time(lambda: _kernels_py.local_linear_grid(x, y, w, g, h))
    rows.append(("python", t_py))
    if _compiled is not None:
        t_cy = _time(lambda: _compiled.local_linear_grid(x, y, w, g, h))
        rows.append(("cython", t_cy))
        ref, _ = _kernels_py.local_linear_grid(x, y, w, g, h)
        out, _ = _compiled.local_linear_grid(x, y, w, g, h)
        assert np.allclose(ref, out, rtol=1e-9), "backend mismatch"
    return "local_linear_grid(n=%d, grid=%d)" % (n, grid), rows


def bench_search(n=4000, seed=0):
    # end to end: one policy search per backend via the env switch
    import subprocess
    import sys

    code = (
        "import time, numpy as np, linregime as lr\n"
        "spec = lr.DgpSpec(n=%d, seed=3)\n"
        "data = lr.generate(spec)\n"
        "nf = lr.fit_nuisance(data, lr.EstimatorSpec(method='oracle'), oracle_fns=lr.oracle_functions(spec))\n"
        "cfg = lr.SearchConfig(population=64, generations=60, seed=1)\n"
        "t0 = time.perf_counter(); r = lr.search(data, nf, cfg)\n"
        "print('%%s %%.4f' %% (lr.KERNEL_BACKEND, time.perf_counter() - t0))\n" % n
    )
    rows = []
    for env_val in ("", "1"):
        env = dict(**__import__("os").environ, LINREGIME_PURE_PYTHON=env_val)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        backend, secs = out.stdout.split()
        rows.append((backend, float(secs)))
    return "policy search end-to-end (n=%d)" % n, rows


def main():
    for title, rows in (bench_treated_gain_sums(), bench_local_linear(), bench_search()):
        print(title)
        base = dict(rows).get("python")
        for name, secs in rows:
            speedup = "" if name == "python" else "  (%.1fx vs python)" % (base / secs)
            print("  %-8s %10.4f s%s" % (name, secs, speedup))
        print()


if __name__ == "__main__":
    main()
