"""Percentile bootstrap for the regime coefficients.

The estimated coefficients converge at a cube-root rate to a non-normal
limit, so the plain nonparametric bootstrap is inconsistent for them.
Instead, each resample maximizes a reshaped objective: the per-observation
pseudo-outcome, recentred by the original-sample value curve and penalized
by a quadratic form in an estimated curvature matrix. The curvature matrix
comes from a four-point second-difference stencil with step ``epsilon``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from . import kernels
from .aipw import ValueEvaluator, pseudo_outcome, value as aipw_value
from .data import Dataset, RegimeParameter, _coef_array
from .exceptions import BootstrapError, DataError
from .nuisance import EstimatorSpec, NuisanceFit, fit_nuisance
from .search import SearchConfig, maximize_on_sphere

_MAX_CONSECUTIVE_REDRAWS = 10
DEFAULT_EPSILON_GRID = (0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class HessianEstimate:
    """Second-difference estimate of the negative value-function curvature.

    ``matrix`` is the symmetrized, eigenvalue-floored (positive definite)
    version used by the reshaped objective; ``raw`` keeps the unadjusted
    stencil output for diagnostics.
    """

    matrix: np.ndarray
    raw: np.ndarray = field(repr=False)
    epsilon: float
    psd_adjusted: bool
    eigenvalue_floor: float

    def to_dict(self) -> dict:
        return {
            "matrix": [[float(v) for v in row] for row in self.matrix],
            "epsilon": self.epsilon,
            "psd_adjusted": self.psd_adjusted,
            "eigenvalue_floor": self.eigenvalue_floor,
        }


def hessian_fd(objective, beta_hat, epsilon: float, eigenvalue_floor: float = 1e-6) -> HessianEstimate:
    """Four-point second differences of -objective around beta_hat.

    Entry (k, m) is -[f(b+ek*e+em*e) - f(b+ek*e-em*e) - f(b-ek*e+em*e)
    + f(b-ek*e-em*e)] / (4 e^2), evaluated at the raw displaced vectors
    (no re-projection onto the sphere; the decision rule is scale-free, so
    displaced evaluations agree with their normalized counterparts). The
    result is exact for quadratic objectives at any step size.
    """
    if not epsilon > 0:
        raise BootstrapError("epsilon must be positive")
    b = _coef_array(beta_hat)
    l = b.size
    raw = np.empty((l, l))
    eye = np.eye(l)
    for k in range(l):
        for m in range(k, l):
            hk = epsilon * eye[k]
            hm = epsilon * eye[m]
            stencil = (
                objective(b + hk + hm)
                - objective(b + hk - hm)
                - objective(b - hk + hm)
                + objective(b - hk - hm)
            )
            if not np.isfinite(stencil):
                raise BootstrapError(
                    "non-finite objective at displaced point (k=%d, m=%d, epsilon=%g)" % (k, m, epsilon)
                )
            raw[k, m] = raw[m, k] = -stencil / (4.0 * epsilon * epsilon)

    eigvals, eigvecs = np.linalg.eigh(raw)
    adjusted = bool(np.any(eigvals < eigenvalue_floor))
    if adjusted:
        floored = np.maximum(eigvals, eigenvalue_floor)
        mat = (eigvecs * floored) @ eigvecs.T
        mat = 0.5 * (mat + mat.T)
    else:
        mat = raw.copy()
    return HessianEstimate(
        matrix=mat, raw=raw, epsilon=float(epsilon),
        psd_adjusted=adjusted, eigenvalue_floor=float(eigenvalue_floor),
    )


def quadratic_penalty(coef, beta_hat, hessian) -> float:
    """0.5 * (beta_hat - coef)' H (beta_hat - coef)."""
    h = hessian.matrix if isinstance(hessian, HessianEstimate) else np.asarray(hessian, dtype=np.float64)
    d = _coef_array(beta_hat) - _coef_array(coef)
    return 0.5 * float(d @ h @ d)


def reshape_objective(i: int, data: Dataset, nf: NuisanceFit, coef, beta_hat, hessian) -> float:
    """Reshaped pseudo-outcome for observation i.

    Pseudo-outcome minus the full-sample value at the same coefficients
    minus the quadratic curvature penalty. Averaged over the original
    sample this is exactly minus the penalty, which is the recentring that
    makes the resampled argmax distribution consistent.
    """
    return (
        pseudo_outcome(i, data, nf, coef)
        - aipw_value(data, nf, coef)
        - quadratic_penalty(coef, beta_hat, hessian)
    )


def percentile_ci(draws: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-column percentile interval with linear-interpolation quantiles."""
    alpha = 1.0 - level
    lo = np.quantile(draws, alpha / 2.0, axis=0, method="linear")
    hi = np.quantile(draws, 1.0 - alpha / 2.0, axis=0, method="linear")
    return lo, hi


@dataclass(frozen=True)
class BootstrapReport:
    """Resampled coefficient draws and their percentile intervals."""

    draws: np.ndarray = field(repr=False)
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    epsilon: float
    refit_nuisance: bool
    n_draws: int
    level: float
    beta_hat: RegimeParameter
    sample_n: int
    n_redraws: int = 0
    psd_adjusted: bool = False

    @property
    def lengths(self) -> np.ndarray:
        return self.ci_hi - self.ci_lo

    @property
    def recentred_draws(self) -> np.ndarray:
        """n^(1/3) * (draw - beta_hat), for distribution diagnostics."""
        return self.sample_n ** (1.0 / 3.0) * (self.draws - self.beta_hat.coef)

    def significant(self) -> np.ndarray:
        """Per-coordinate flag: the CI excludes zero."""
        return (self.ci_lo > 0.0) | (self.ci_hi < 0.0)

    def to_dict(self, column_names=None) -> dict:
        names = list(column_names) if column_names is not None else [
            "coef_%d" % j for j in range(self.draws.shape[1])
        ]
        return {
            "epsilon": self.epsilon,
            "refit_nuisance": self.refit_nuisance,
            "n_draws": self.n_draws,
            "level": self.level,
            "n": self.sample_n,
            "n_redraws": self.n_redraws,
            "psd_adjusted": self.psd_adjusted,
            "coef": [float(c) for c in self.beta_hat.coef],
            "intervals": {
                name: {
                    "estimate": float(self.beta_hat.coef[j]),
                    "ci_lo": float(self.ci_lo[j]),
                    "ci_hi": float(self.ci_hi[j]),
                    "length": float(self.ci_hi[j] - self.ci_lo[j]),
                    "significant": bool(self.significant()[j]),
                }
                for j, name in enumerate(names)
            },
        }


def write_draws_csv(report: BootstrapReport, path, column_names=None) -> None:
    """Dump draws as long-format CSV: draw index, coordinate, value."""
    names = list(column_names) if column_names is not None else [
        "coef_%d" % j for j in range(report.draws.shape[1])
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["b", "coordinate", "value"])
        for b in range(report.draws.shape[0]):
            for j, name in enumerate(names):
                writer.writerow([b, name, repr(float(report.draws[b, j]))])


def _resample_indices(rng: np.random.Generator, n: int, treatments, refit: bool):
    """One with-replacement draw; under refit, redo single-arm draws."""
    redraws = 0
    for _ in range(_MAX_CONSECUTIVE_REDRAWS):
        idx = rng.integers(0, n, size=n)
        if not refit:
            return idx, redraws
        resampled = treatments[idx]
        if resampled.min() != resampled.max():
            return idx, redraws
        redraws += 1
    raise BootstrapError(
        "resampling produced %d consecutive single-arm draws" % _MAX_CONSECUTIVE_REDRAWS
    )


def _single_draw(b: int, seed: int, data: Dataset, nf: NuisanceFit,
                 orig_evaluator: ValueEvaluator, beta_hat_coef: np.ndarray,
                 hess_matrix: np.ndarray, refit: bool,
                 estimator_spec: EstimatorSpec | None, search_config: SearchConfig):
    rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
    idx, redraws = _resample_indices(rng, data.n, data.treatments, refit)
    rdata = data.subset(idx)
    if refit:
        with warnings.catch_warnings():
            # the original-sample fit already surfaced overlap warnings;
            # repeating them for every resample is noise
            warnings.simplefilter("ignore")
            rnf = fit_nuisance(rdata, estimator_spec)
    else:
        rnf = nf.subset(idx)
    res_evaluator = ValueEvaluator(rdata, rnf)

    # resample value minus original value in a single accumulation pass:
    # stack the original rows with negated gains behind the resampled rows
    x_stacked = np.ascontiguousarray(np.vstack([res_evaluator.covariates, orig_evaluator.covariates]))
    gain_stacked = np.ascontiguousarray(np.concatenate([res_evaluator.gain, -orig_evaluator.gain]))
    base_diff = res_evaluator.base - orig_evaluator.base
    n = float(data.n)

    def objective(candidates: np.ndarray) -> np.ndarray:
        diffs = beta_hat_coef[None, :] - candidates
        penalties = 0.5 * np.einsum("ij,jk,ik->i", diffs, hess_matrix, diffs)
        sums = kernels.treated_gain_sums(x_stacked, gain_stacked, candidates)
        return (base_diff + sums) / n - penalties

    sub_cfg = replace(search_config, seed=int(rng.integers(0, 2**62)))
    coef, _val, _n_ev, _trace, _flat, _ext = maximize_on_sphere(objective, data.n_covariates, sub_cfg)
    return coef, redraws


def _draw_block(indices, seed: int, args: dict):
    return [_single_draw(b, seed, **args) for b in indices]


def bootstrap_draws(data: Dataset, nf: NuisanceFit, beta_hat: RegimeParameter,
                    hessian: HessianEstimate, n_draws: int, *,
                    refit: bool = False, estimator_spec: EstimatorSpec | None = None,
                    seed: int = 0, search_config: SearchConfig | None = None,
                    level: float = 0.95, n_jobs: int = 1) -> BootstrapReport:
    """Resample, re-maximize the reshaped objective, report percentile CIs.

    Each draw owns a PRNG substream derived from (seed, draw index), so
    results do not depend on worker scheduling. With refit=False the
    original nuisance values are reused on the resampled rows (the cheap
    default); refit=True re-estimates them per resample and needs
    ``estimator_spec``.
    """
    if n_draws < 1:
        raise BootstrapError("need at least one bootstrap draw")
    if refit and estimator_spec is None:
        raise BootstrapError("refit=True requires an estimator_spec")
    if not (0.0 < level < 1.0):
        raise DataError("confidence level must be in (0, 1)")
    search_config = search_config or SearchConfig()
    orig_evaluator = ValueEvaluator(data, nf)
    args = dict(
        data=data, nf=nf, orig_evaluator=orig_evaluator,
        beta_hat_coef=beta_hat.coef, hess_matrix=hessian.matrix,
        refit=refit, estimator_spec=estimator_spec, search_config=search_config,
    )
    if n_jobs == 1:
        results = [_single_draw(b, seed, **args) for b in range(n_draws)]
    else:
        # one contiguous block per worker: draws are seeded by index, so
        # the partitioning cannot change the results, only the schedule
        blocks = np.array_split(np.arange(n_draws), min(max(n_jobs, 1), n_draws))
        block_results = Parallel(n_jobs=n_jobs)(
            delayed(_draw_block)(list(block), seed, args) for block in blocks if len(block)
        )
        results = [item for block in block_results for item in block]
    draws = np.vstack([coef for coef, _ in results])
    n_redraws = int(sum(r for _, r in results))
    ci_lo, ci_hi = percentile_ci(draws, level)
    return BootstrapReport(
        draws=draws, ci_lo=ci_lo, ci_hi=ci_hi,
        epsilon=hessian.epsilon, refit_nuisance=refit, n_draws=n_draws,
        level=level, beta_hat=beta_hat, sample_n=data.n, n_redraws=n_redraws,
        psd_adjusted=hessian.psd_adjusted,
    )


def recommend_epsilon(grid, summed_lengths) -> float:
    """Pick the step whose total CI length is a local minimum.

    A grid point is a local minimum when no adjacent point is strictly
    shorter; among local minima the shortest wins, ties going to the
    smaller step.
    """
    grid = list(grid)
    lengths = [float(s) for s in summed_lengths]
    if len(grid) != len(lengths) or not grid:
        raise BootstrapError("grid and lengths must be equal-length and nonempty")
    order = np.argsort(grid, kind="stable")
    grid = [grid[i] for i in order]
    lengths = [lengths[i] for i in order]
    minima = []
    for i in range(len(grid)):
        left_ok = i == 0 or lengths[i] <= lengths[i - 1]
        right_ok = i == len(grid) - 1 or lengths[i] <= lengths[i + 1]
        if left_ok and right_ok:
            minima.append(i)
    best = min(minima, key=lambda i: (lengths[i], grid[i]))
    return float(grid[best])


def epsilon_sweep(data: Dataset, nf: NuisanceFit, beta_hat: RegimeParameter,
                  grid, n_draws: int, *, refit: bool = False,
                  estimator_spec: EstimatorSpec | None = None, seed: int = 0,
                  search_config: SearchConfig | None = None, level: float = 0.95,
                  n_jobs: int = 1, eigenvalue_floor: float = 1e-6):
    """Bootstrap once per step value; recommend the local-minimum length.

    The same resampling seed is reused for every step so the comparison
    across steps is paired. Returns (reports, recommended_epsilon).
    """
    grid = [float(e) for e in grid]
    if not grid or any(e <= 0 for e in grid):
        raise BootstrapError("epsilon grid must be nonempty and positive")
    evaluator = ValueEvaluator(data, nf)
    reports = []
    for eps in grid:
        hess = hessian_fd(evaluator.value, beta_hat, eps, eigenvalue_floor=eigenvalue_floor)
        reports.append(
            bootstrap_draws(
                data, nf, beta_hat, hess, n_draws,
                refit=refit, estimator_spec=estimator_spec, seed=seed,
                search_config=search_config, level=level, n_jobs=n_jobs,
            )
        )
    summed = [float(np.sum(r.lengths)) for r in reports]
    return reports, recommend_epsilon(grid, summed)
