"""Doubly robust value estimation for linear regimes.

The per-observation pseudo-outcome combines the outcome-model prediction
under the regime's decision with an inverse-propensity-weighted residual
correction; the empirical value is its sample mean, and the normal-theory
confidence interval uses the plug-in variance of the pseudo-outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import kernels
from .data import Dataset, RegimeParameter, decisions, _coef_array
from .exceptions import DataError
from .nuisance import NuisanceFit


def pseudo_outcome(i: int, data: Dataset, nf: NuisanceFit, regime) -> float:
    """Pseudo-outcome for observation i under the given regime.

    Equals the predicted arm mean exactly when the observed treatment
    disagrees with the regime's decision.
    """
    x = data.covariates[i]
    a = int(data.treatments[i])
    y = float(data.outcomes[i])
    coef = _coef_array(regime)
    d = int(float(x @ coef) > 0.0)
    mu_d = float(nf.mu1_hat[i]) if d == 1 else float(nf.mu0_hat[i])
    if a != d:
        return mu_d
    e = float(nf.e_hat[i])
    rho = e if a == 1 else 1.0 - e
    val = (y - mu_d) / rho + mu_d
    if not np.isfinite(val):
        raise DataError("non-finite pseudo-outcome at row %d (corrupted nuisance values?)" % i)
    return val


def pseudo_outcomes(data: Dataset, nf: NuisanceFit, regime) -> np.ndarray:
    """Vector of pseudo-outcomes for every observation."""
    d = decisions(data.covariates, regime)
    a = data.treatments
    y = data.outcomes
    w1 = np.where(a == 1, (y - nf.mu1_hat) / nf.e_hat, 0.0) + nf.mu1_hat
    w0 = np.where(a == 0, (y - nf.mu0_hat) / (1.0 - nf.e_hat), 0.0) + nf.mu0_hat
    out = np.where(d == 1, w1, w0)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise DataError("non-finite pseudo-outcome at row %d (corrupted nuisance values?)" % bad)
    return out


def value(data: Dataset, nf: NuisanceFit, regime) -> float:
    """Empirical value of a regime: the mean pseudo-outcome.

    Routed through the same accumulation as the search evaluator so a
    reported search maximum reproduces bit for bit.
    """
    return ValueEvaluator(data, nf).value(_coef_array(regime))


def sigma2(data: Dataset, nf: NuisanceFit, regime) -> float:
    """Plug-in variance of the pseudo-outcomes (divisor n, centered at the value)."""
    if data.n < 2:
        raise DataError("variance estimation needs at least 2 observations")
    v = pseudo_outcomes(data, nf, regime)
    return float(np.mean((v - v.mean()) ** 2))


@dataclass(frozen=True)
class ValueReport:
    """Estimated value with its normal-theory confidence interval."""

    beta_hat: RegimeParameter
    value: float
    sigma2_hat: float
    ci: tuple[float, float]
    level: float
    n: int

    def to_dict(self) -> dict:
        return {
            "coef": [float(c) for c in self.beta_hat.coef],
            "value": self.value,
            "sigma2": self.sigma2_hat,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "level": self.level,
            "n": self.n,
        }


def value_ci(data: Dataset, nf: NuisanceFit, beta_hat: RegimeParameter, level: float = 0.95) -> ValueReport:
    """Normal interval value +- z * sqrt(sigma2 / n) at the given level."""
    if not (0.0 < level < 1.0):
        raise DataError("confidence level must be in (0, 1)")
    v = pseudo_outcomes(data, nf, beta_hat)
    vhat = value(data, nf, beta_hat)  # same accumulation as the search path
    s2 = float(np.mean((v - vhat) ** 2))
    z = float(norm.ppf(0.5 + level / 2.0))
    half = float(z * np.sqrt(s2 / data.n))
    return ValueReport(
        beta_hat=beta_hat,
        value=vhat,
        sigma2_hat=s2,
        ci=(vhat - half, vhat + half),
        level=level,
        n=data.n,
    )


class ValueEvaluator:
    """Precomputed structure for fast value evaluation across many regimes.

    Splitting the pseudo-outcome into its decide-control part (w0) and the
    treat-minus-control gain lets a candidate direction be scored with one
    masked accumulation over the sample, which is the bootstrap/search hot
    loop.
    """

    def __init__(self, data: Dataset, nf: NuisanceFit):
        a = data.treatments
        y = data.outcomes
        self.w1 = np.where(a == 1, (y - nf.mu1_hat) / nf.e_hat, 0.0) + nf.mu1_hat
        self.w0 = np.where(a == 0, (y - nf.mu0_hat) / (1.0 - nf.e_hat), 0.0) + nf.mu0_hat
        if not (np.all(np.isfinite(self.w0)) and np.all(np.isfinite(self.w1))):
            raise DataError("non-finite pseudo-outcome components (corrupted nuisance values?)")
        self.gain = np.ascontiguousarray(self.w1 - self.w0)
        self.base = float(self.w0.sum())
        self.covariates = np.ascontiguousarray(data.covariates)
        self.n = data.n
        self.dim = data.n_covariates

    def values(self, candidates: np.ndarray) -> np.ndarray:
        """Empirical value at each row of a (p, l) candidate matrix."""
        sums = kernels.treated_gain_sums(self.covariates, self.gain, candidates)
        return (self.base + sums) / self.n

    def value(self, coef: np.ndarray) -> float:
        return float(self.values(np.asarray(coef, dtype=np.float64)[None, :])[0])
