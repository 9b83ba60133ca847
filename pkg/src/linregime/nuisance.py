"""Propensity-score and outcome-mean estimation.

Three interchangeable methods:

* ``logistic`` -- parametric: logistic regression (IRLS) for the propensity,
  per-arm least squares for the outcome means.
* ``local-linear-kernel`` -- additive local-linear Gaussian-kernel smoothers,
  combined across covariates by backfitting; the propensity version runs
  local scoring around the additive smoother.
* ``oracle`` -- evaluates user-supplied true functions (for experiments that
  isolate estimator behaviour from nuisance-estimation error).

All propensity outputs are clipped into the configured overlap band.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from . import kernels
from .data import Dataset, validate_overlap
from .exceptions import ConvergenceError, DataError, SeparationError

METHODS = ("logistic", "local-linear-kernel", "oracle")


@dataclass(frozen=True)
class EstimatorSpec:
    """Nuisance-estimation settings shared by the propensity and outcome fits."""

    method: str = "logistic"
    bandwidth: float | None = None  # None: Silverman rule per covariate
    clip: tuple[float, float] = (0.01, 0.99)
    irls_tol: float = 1e-8
    irls_max_iter: int = 100
    backfit_cycles: int = 20
    backfit_tol: float = 1e-10
    scoring_max_iter: int = 30
    scoring_tol: float = 1e-6
    grid_size: int = 401
    cross_fit: bool = False
    n_folds: int = 5

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError("unknown nuisance method %r (choose from %s)" % (self.method, ", ".join(METHODS)))
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise DataError("bandwidth must be positive")
        lo, hi = self.clip
        if not (0.0 < lo < hi < 1.0):
            raise DataError("clip bounds must satisfy 0 < lo < hi < 1")
        if self.grid_size < 2:
            raise DataError("grid_size must be at least 2")
        if self.cross_fit and self.n_folds < 2:
            raise DataError("cross-fitting needs at least 2 folds")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "bandwidth": self.bandwidth,
            "clip": list(self.clip),
            "irls_tol": self.irls_tol,
            "irls_max_iter": self.irls_max_iter,
            "backfit_cycles": self.backfit_cycles,
            "grid_size": self.grid_size,
            "cross_fit": self.cross_fit,
            "n_folds": self.n_folds,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EstimatorSpec":
        kwargs = dict(raw)
        if "clip" in kwargs:
            kwargs["clip"] = tuple(kwargs["clip"])
        return cls(**kwargs)


@dataclass(frozen=True)
class FittedFunction:
    """Fitted values at the training points plus a predictor for new points."""

    values: np.ndarray
    predict: Callable[[np.ndarray], np.ndarray]
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NuisanceFit:
    """Per-observation nuisance estimates and the predictors behind them."""

    e_hat: np.ndarray
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    predict_e: Callable[[np.ndarray], np.ndarray] | None = None
    predict_mu0: Callable[[np.ndarray], np.ndarray] | None = None
    predict_mu1: Callable[[np.ndarray], np.ndarray] | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.asarray(self.e_hat, dtype=np.float64)
        mu0 = np.asarray(self.mu0_hat, dtype=np.float64)
        mu1 = np.asarray(self.mu1_hat, dtype=np.float64)
        if not (e.shape == mu0.shape == mu1.shape) or e.ndim != 1:
            raise DataError("nuisance components must be equal-length vectors")
        if np.any(e <= 0.0) or np.any(e >= 1.0):
            raise DataError("propensity estimates must lie strictly inside (0, 1)")
        if not (np.all(np.isfinite(mu0)) and np.all(np.isfinite(mu1))):
            raise DataError("outcome-mean estimates contain non-finite values")
        for arr in (e, mu0, mu1):
            arr.setflags(write=False)
        object.__setattr__(self, "e_hat", e)
        object.__setattr__(self, "mu0_hat", mu0)
        object.__setattr__(self, "mu1_hat", mu1)

    def subset(self, indices: np.ndarray) -> "NuisanceFit":
        """Fitted-value view on resampled rows (predictors are reused)."""
        return NuisanceFit(
            e_hat=self.e_hat[indices],
            mu0_hat=self.mu0_hat[indices],
            mu1_hat=self.mu1_hat[indices],
            predict_e=self.predict_e,
            predict_mu0=self.predict_mu0,
            predict_mu1=self.predict_mu1,
            diagnostics=self.diagnostics,
        )


def silverman_bandwidth(x: np.ndarray, m: int | None = None) -> float:
    """Rule-of-thumb bandwidth 1.06 * sd * m^(-1/5)."""
    m = x.size if m is None else m
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return 1.06 * sd * m ** (-0.2)


def _smoothable_columns(x: np.ndarray) -> list[int]:
    return [j for j in range(x.shape[1]) if np.ptp(x[:, j]) > 0.0]


class AdditiveSmoother:
    """Backfitted additive model with local-linear component smoothers.

    Each component function lives on an equispaced grid spanning its
    covariate's observed range and is evaluated elsewhere by linear
    interpolation, which preserves the local-linear property of
    reproducing affine targets exactly. Smoothing passes canonicalize the
    row order, so refitting permuted data gives identical values.
    """

    def __init__(self, bandwidth=None, grid_size=401, cycles=20, tol=1e-10):
        self.bandwidth = bandwidth
        self.grid_size = grid_size
        self.cycles = cycles
        self.tol = tol
        self.alpha = 0.0
        self.columns: list[int] = []
        self.grids: dict[int, np.ndarray] = {}
        self.curves: dict[int, np.ndarray] = {}
        self.bandwidths: dict[int, float] = {}
        self.fitted_: np.ndarray | None = None
        self.n_fallbacks = 0
        self.n_cycles = 0

    def fit(self, x: np.ndarray, response: np.ndarray, weights=None, columns=None):
        n = x.shape[0]
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        cols = _smoothable_columns(x) if columns is None else list(columns)
        # a requested column can still be constant in this subsample
        cols = [j for j in cols if np.ptp(x[:, j]) > 0.0]
        self.columns = cols
        self.alpha = float(np.average(response, weights=w))
        self.n_fallbacks = 0

        component = {j: np.zeros(n) for j in cols}
        for j in cols:
            xj = x[:, j]
            self.grids[j] = np.linspace(xj.min(), xj.max(), self.grid_size)
            self.curves[j] = np.zeros(self.grid_size)
            h = self.bandwidth if self.bandwidth is not None else silverman_bandwidth(xj)
            span = float(xj.max() - xj.min())
            self.bandwidths[j] = max(float(h), 1e-12 * max(span, 1.0))

        total = np.zeros(n)
        scale = 1.0 + float(np.max(np.abs(response))) if n else 1.0
        self.n_cycles = 0
        for _ in range(max(1, self.cycles)):
            self.n_cycles += 1
            delta = 0.0
            for j in cols:
                xj = x[:, j]
                partial = response - self.alpha - (total - component[j])
                order = np.lexsort((partial, xj))
                vals, nfb = kernels.local_linear_grid(
                    xj[order], partial[order], w[order], self.grids[j], self.bandwidths[j]
                )
                self.n_fallbacks += nfb
                new_comp = np.interp(xj, self.grids[j], vals)
                center = float(np.average(new_comp, weights=w))
                vals = vals - center
                new_comp = new_comp - center
                self.alpha += center
                delta = max(delta, float(np.max(np.abs(new_comp - component[j]))) if n else 0.0)
                total += new_comp - component[j]
                component[j] = new_comp
                self.curves[j] = vals
            if delta <= self.tol * scale:
                break
        self.fitted_ = self.alpha + total
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.full(x.shape[0], self.alpha)
        for j in self.columns:
            out += np.interp(x[:, j], self.grids[j], self.curves[j])
        return out


class AdditiveLogisticSmoother:
    """Local-scoring fit of an additive logistic model.

    Outer loop: IRLS-style working response and weights; inner loop: the
    weighted additive local-linear smoother. Fitted logits are kept in
    [-15, 15] for numerical stability.
    """

    _ETA_CAP = 15.0
    _WEIGHT_FLOOR = 1e-4

    def __init__(self, bandwidth=None, grid_size=401, cycles=20, max_iter=30, tol=1e-6):
        self.bandwidth = bandwidth
        self.grid_size = grid_size
        self.cycles = cycles
        self.max_iter = max_iter
        self.tol = tol
        self.model: AdditiveSmoother | None = None
        self.converged = False
        self.n_iter = 0
        self.n_fallbacks = 0

    def fit(self, x: np.ndarray, labels: np.ndarray, columns=None):
        n = x.shape[0]
        p_bar = min(max(float(np.mean(labels)), 1.0 / (n + 1)), n / (n + 1.0))
        eta = np.full(n, float(logit(p_bar)))
        self.n_fallbacks = 0
        for it in range(1, self.max_iter + 1):
            self.n_iter = it
            p = expit(eta)
            w = np.maximum(p * (1.0 - p), self._WEIGHT_FLOOR)
            z = eta + (labels - p) / w
            model = AdditiveSmoother(
                bandwidth=self.bandwidth, grid_size=self.grid_size, cycles=self.cycles
            ).fit(x, z, weights=w, columns=columns)
            self.n_fallbacks += model.n_fallbacks
            new_eta = np.clip(model.fitted_, -self._ETA_CAP, self._ETA_CAP)
            self.model = model
            if float(np.max(np.abs(new_eta - eta))) < self.tol:
                eta = new_eta
                self.converged = True
                break
            eta = new_eta
        self._eta = eta
        return self

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        eta = np.clip(self.model.predict(x), -self._ETA_CAP, self._ETA_CAP)
        return expit(eta)


def _irls_logistic(x: np.ndarray, labels: np.ndarray, tol: float, max_iter: int, ridge: float = 1e-8):
    """Binomial MLE via iteratively reweighted least squares.

    Returns (coef, n_iter, score_inf_norm). Raises on non-convergence and
    on diverging coefficients (perfect separation).
    """
    n, l = x.shape
    coef = np.zeros(l)
    eye = np.eye(l)
    for it in range(1, max_iter + 1):
        eta = x @ coef
        if float(np.max(np.abs(eta))) > 100.0:
            raise SeparationError(
                "perfect separation suspected (fitted logits exceed 100); "
                "consider clipping or a regularized/kernel propensity model"
            )
        p = expit(eta)
        score = x.T @ (labels - p)
        w = p * (1.0 - p)
        hess = x.T @ (x * w[:, None]) + ridge * eye
        step = np.linalg.solve(hess, score)
        coef = coef + step
        if float(np.max(np.abs(step))) < tol:
            score_norm = float(np.max(np.abs(x.T @ (labels - expit(x @ coef)))))
            return coef, it, score_norm
    score_norm = float(np.max(np.abs(x.T @ (labels - expit(x @ coef)))))
    raise ConvergenceError(
        "IRLS did not converge in %d iterations (score inf-norm %.3e)" % (max_iter, score_norm)
    )


def _fold_assignments(n: int, n_folds: int) -> np.ndarray:
    return np.arange(n) % n_folds


def _canonical_order(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Row order keyed on content, not position.

    Fitting on rows sorted this way makes every internal reduction see the
    same summation order regardless of how the input was permuted, so
    refits of shuffled data give bitwise-identical fitted values.
    """
    keys = (data.outcomes, data.treatments) + tuple(
        data.covariates[:, j] for j in range(data.n_covariates - 1, -1, -1)
    )
    order = np.lexsort(keys)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return order, inverse


def _check_arms(treatments: np.ndarray):
    if not (np.any(treatments == 1) and np.any(treatments == 0)):
        raise DataError("both treatment arms must be present")


def fit_propensity(data: Dataset, spec: EstimatorSpec) -> FittedFunction:
    """Estimate Pr(A=1 | X) at every observation, clipped into spec.clip."""
    _check_arms(data.treatments)
    order, inv = _canonical_order(data)
    x = data.covariates[order]
    a = data.treatments[order].astype(np.float64)
    lo, hi = spec.clip

    if spec.method == "logistic":
        def fit_one(xf, af):
            coef, n_iter, score_norm = _irls_logistic(xf, af, spec.irls_tol, spec.irls_max_iter)
            return coef, {"irls_iterations": n_iter, "score_inf_norm": score_norm,
                          "coef": [float(c) for c in coef]}

        coef, diag = fit_one(x, a)
        raw = expit(x @ coef)
        predict = lambda xn, c=coef: np.clip(expit(np.asarray(xn, dtype=np.float64) @ c), lo, hi)
        if spec.cross_fit:
            folds = _fold_assignments(data.n, spec.n_folds)
            raw = np.empty(data.n)
            for k in range(spec.n_folds):
                mask = folds == k
                coef_k, _, _ = _irls_logistic(x[~mask], a[~mask], spec.irls_tol, spec.irls_max_iter)
                raw[mask] = expit(x[mask] @ coef_k)
    elif spec.method == "local-linear-kernel":
        cols = [j for j in _smoothable_columns(x)]
        smoother = AdditiveLogisticSmoother(
            bandwidth=spec.bandwidth, grid_size=spec.grid_size, cycles=spec.backfit_cycles,
            max_iter=spec.scoring_max_iter, tol=spec.scoring_tol,
        ).fit(x, a, columns=cols)
        raw = expit(smoother._eta)
        diag = {
            "scoring_iterations": smoother.n_iter,
            "scoring_converged": smoother.converged,
            "local_constant_fallbacks": smoother.n_fallbacks,
        }
        predict = lambda xn, s=smoother: np.clip(s.predict_proba(np.asarray(xn, dtype=np.float64)), lo, hi)
        if spec.cross_fit:
            folds = _fold_assignments(data.n, spec.n_folds)
            raw = np.empty(data.n)
            for k in range(spec.n_folds):
                mask = folds == k
                sm_k = AdditiveLogisticSmoother(
                    bandwidth=spec.bandwidth, grid_size=spec.grid_size, cycles=spec.backfit_cycles,
                    max_iter=spec.scoring_max_iter, tol=spec.scoring_tol,
                ).fit(x[~mask], a[~mask], columns=cols)
                raw[mask] = sm_k.predict_proba(x[mask])
    else:
        raise DataError("fit_propensity cannot run with method 'oracle'; use oracle_nuisance")

    n_clipped = int(np.sum((raw < lo) | (raw > hi)))
    values = np.clip(raw, lo, hi)[inv]
    diag.update({"n_clipped": n_clipped, "clip": [lo, hi]})
    return FittedFunction(values=values, predict=predict, diagnostics=diag)


def fit_outcome_means(data: Dataset, spec: EstimatorSpec) -> tuple[FittedFunction, FittedFunction]:
    """Regress the outcome on covariates within each arm; predict everywhere."""
    _check_arms(data.treatments)
    order, inv = _canonical_order(data)
    x = data.covariates[order]
    y = data.outcomes[order]
    treatments = data.treatments[order]
    fits = {}
    for arm in (0, 1):
        mask = treatments == arm
        if int(mask.sum()) < 2:
            raise DataError("treatment arm %d has fewer than 2 observations" % arm)
        xa, ya = x[mask], y[mask]

        if spec.method == "logistic":
            coef, *_ = np.linalg.lstsq(xa, ya, rcond=None)
            values = x @ coef
            predict = lambda xn, c=coef: np.asarray(xn, dtype=np.float64) @ c
            diag = {"coef": [float(c) for c in coef], "arm_n": int(mask.sum())}
            if spec.cross_fit:
                folds = _fold_assignments(data.n, spec.n_folds)
                values = x @ coef  # refined below fold by fold
                values = np.array(values)
                for k in range(spec.n_folds):
                    fmask = folds == k
                    train = mask & ~fmask
                    if int(train.sum()) < 2:
                        continue
                    coef_k, *_ = np.linalg.lstsq(x[train], y[train], rcond=None)
                    values[fmask] = x[fmask] @ coef_k
        elif spec.method == "local-linear-kernel":
            cols = _smoothable_columns(xa)
            bw = spec.bandwidth
            model = AdditiveSmoother(
                bandwidth=bw, grid_size=spec.grid_size, cycles=spec.backfit_cycles,
                tol=spec.backfit_tol,
            ).fit(xa, ya, columns=cols)
            values = model.predict(x)
            predict = lambda xn, m=model: m.predict(np.asarray(xn, dtype=np.float64))
            diag = {
                "arm_n": int(mask.sum()),
                "backfit_cycles": model.n_cycles,
                "local_constant_fallbacks": model.n_fallbacks,
                "bandwidths": {int(j): float(h) for j, h in model.bandwidths.items()},
            }
            if spec.cross_fit:
                folds = _fold_assignments(data.n, spec.n_folds)
                values = np.array(values)
                for k in range(spec.n_folds):
                    fmask = folds == k
                    train = mask & ~fmask
                    if int(train.sum()) < 2:
                        continue
                    m_k = AdditiveSmoother(
                        bandwidth=bw, grid_size=spec.grid_size, cycles=spec.backfit_cycles,
                        tol=spec.backfit_tol,
                    ).fit(x[train], y[train], columns=cols)
                    values[fmask] = m_k.predict(x[fmask])
        else:
            raise DataError("fit_outcome_means cannot run with method 'oracle'; use oracle_nuisance")

        if not np.all(np.isfinite(values)):
            raise DataError("outcome-mean fit for arm %d produced non-finite values" % arm)
        fits[arm] = FittedFunction(values=np.asarray(values, dtype=np.float64)[inv],
                                   predict=predict, diagnostics=diag)
    return fits[0], fits[1]


def oracle_nuisance(data: Dataset, true_e, true_mu0, true_mu1,
                    clip: tuple[float, float] = (0.01, 0.99)) -> NuisanceFit:
    """Nuisance 'fit' that evaluates known true functions on the sample.

    The callables receive the full covariate matrix (one row per subject,
    including any constant column) and return a vector.
    """
    lo, hi = clip
    x = data.covariates
    e = np.clip(np.asarray(true_e(x), dtype=np.float64), lo, hi)
    mu0 = np.asarray(true_mu0(x), dtype=np.float64)
    mu1 = np.asarray(true_mu1(x), dtype=np.float64)
    return NuisanceFit(
        e_hat=e,
        mu0_hat=mu0,
        mu1_hat=mu1,
        predict_e=lambda xn: np.clip(np.asarray(true_e(np.asarray(xn, dtype=np.float64)), dtype=np.float64), lo, hi),
        predict_mu0=lambda xn: np.asarray(true_mu0(np.asarray(xn, dtype=np.float64)), dtype=np.float64),
        predict_mu1=lambda xn: np.asarray(true_mu1(np.asarray(xn, dtype=np.float64)), dtype=np.float64),
        diagnostics={"method": "oracle", "clip": [lo, hi]},
    )


def fit_nuisance(data: Dataset, spec: EstimatorSpec, oracle_fns=None) -> NuisanceFit:
    """Fit propensity and outcome means per the estimator settings; warn on poor overlap."""
    if spec.method == "oracle":
        if oracle_fns is None:
            raise DataError("method 'oracle' requires the true (e, mu0, mu1) functions")
        return oracle_nuisance(data, *oracle_fns, clip=spec.clip)

    prop = fit_propensity(data, spec)
    mu0, mu1 = fit_outcome_means(data, spec)

    overlap = validate_overlap(prop.values, bounds=spec.clip)
    # the clipped values sit inside the band by construction; warn using the
    # pre-clip count recorded by the propensity fit
    n_outside = prop.diagnostics.get("n_clipped", 0)
    if n_outside:
        warnings.warn(
            "%d of %d propensity estimates fell outside [%g, %g] and were clipped"
            % (n_outside, data.n, *spec.clip),
            stacklevel=2,
        )
    return NuisanceFit(
        e_hat=prop.values,
        mu0_hat=mu0.values,
        mu1_hat=mu1.values,
        predict_e=prop.predict,
        predict_mu0=mu0.predict,
        predict_mu1=mu1.predict,
        diagnostics={
            "method": spec.method,
            "propensity": prop.diagnostics,
            "mu0": mu0.diagnostics,
            "mu1": mu1.diagnostics,
            "overlap": overlap.to_dict(),
        },
    )
