"""Synthetic data generation and Monte Carlo study drivers.

The default generator draws two independent uniform covariates with unit
variance, assigns treatment from a logistic propensity and produces a
linear outcome with an additive treatment-effect contrast, so the optimal
linear rule is known in closed form and the true value of any regime can
be estimated to arbitrary precision by direct simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .aipw import ValueEvaluator, value_ci
from .bootstrap import bootstrap_draws, hessian_fd
from .data import Dataset, RegimeParameter, _coef_array
from .exceptions import DataError, LinregimeError
from .nuisance import EstimatorSpec, fit_nuisance
from .search import SearchConfig, search

_SQRT3 = math.sqrt(3.0)


def _derive_seed(master: int, *keys: int) -> int:
    state = np.random.SeedSequence([int(master), *[int(k) for k in keys]]).generate_state(1, dtype=np.uint64)
    return int(state[0] >> 1)


@dataclass(frozen=True)
class DgpSpec:
    """Parameterized generator; defaults match the benchmark design.

    Coefficient vectors apply to (1, X1, ..., Xd). Covariates are i.i.d.
    uniform on [uniform_low, uniform_high] (default: mean 1, variance 1).
    """

    n: int
    seed: int = 0
    uniform_low: float = 1.0 - _SQRT3
    uniform_high: float = 1.0 + _SQRT3
    propensity_coef: tuple[float, ...] = (-1.0, 0.8, 0.8)
    baseline_coef: tuple[float, ...] = (2.0, -1.5, -1.5)
    contrast_coef: tuple[float, ...] = (0.0, 2.0, 1.0)
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise DataError("n must be at least 1")
        if not self.noise_sd > 0:
            raise DataError("noise_sd must be positive")
        if not (len(self.propensity_coef) == len(self.baseline_coef) == len(self.contrast_coef)):
            raise DataError("coefficient vectors must share one length")
        if not self.uniform_low < self.uniform_high:
            raise DataError("uniform_low must be below uniform_high")

    @property
    def n_covariates(self) -> int:
        return len(self.propensity_coef) - 1

    @property
    def true_beta(self) -> RegimeParameter:
        """Unit-norm coefficients of the optimal rule: treat iff contrast > 0."""
        return RegimeParameter.normalized(np.asarray(self.contrast_coef, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "uniform_low": self.uniform_low,
            "uniform_high": self.uniform_high,
            "propensity_coef": list(self.propensity_coef),
            "baseline_coef": list(self.baseline_coef),
            "contrast_coef": list(self.contrast_coef),
            "noise_sd": self.noise_sd,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DgpSpec":
        kwargs = dict(raw)
        for key in ("propensity_coef", "baseline_coef", "contrast_coef"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def generate_full(spec: DgpSpec, noise_sd: float | None = None) -> dict:
    """Generate a sample plus internals (potential outcomes, noise, truth).

    ``noise_sd`` overrides the generator's noise level (0 is allowed here as a
    test hook for checking the deterministic part of the generator).
    """
    sd = spec.noise_sd if noise_sd is None else float(noise_sd)
    rng = np.random.default_rng(spec.seed)
    d = spec.n_covariates
    covs = rng.uniform(spec.uniform_low, spec.uniform_high, size=(spec.n, d))
    x = np.hstack([np.ones((spec.n, 1)), covs])
    e = expit(x @ np.asarray(spec.propensity_coef))
    a = (rng.uniform(size=spec.n) < e).astype(np.int64)
    eps = sd * rng.standard_normal(spec.n)
    y0 = x @ np.asarray(spec.baseline_coef) + eps
    y1 = y0 + x @ np.asarray(spec.contrast_coef)
    y = np.where(a == 1, y1, y0)
    names = ("intercept",) + tuple("x%d" % (j + 1) for j in range(d))
    dataset = Dataset(
        covariates=x, treatments=a, outcomes=y,
        column_names=names, has_intercept=True,
    )
    return {"dataset": dataset, "propensity": e, "y0": y0, "y1": y1, "noise": eps}


def generate(spec: DgpSpec) -> Dataset:
    """Generate one observational sample; deterministic given spec.seed."""
    return generate_full(spec)["dataset"]


def oracle_functions(spec: DgpSpec):
    """True (e, mu0, mu1) as callables on the full covariate matrix."""
    prop = np.asarray(spec.propensity_coef)
    base = np.asarray(spec.baseline_coef)
    contrast = np.asarray(spec.contrast_coef)
    return (
        lambda x: expit(np.asarray(x) @ prop),
        lambda x: np.asarray(x) @ base,
        lambda x: np.asarray(x) @ (base + contrast),
    )


def true_value_oracle(spec: DgpSpec, regime, draws: int, seed: int = 0,
                      chunk: int = 1_000_000) -> tuple[float, float]:
    """Monte Carlo truth for a regime's value, with its standard error.

    Materializes both potential outcomes per draw and averages the one the
    regime selects; independent of the estimation pipeline.
    """
    if draws < 1:
        raise DataError("draws must be at least 1")
    coef = _coef_array(regime)
    rng = np.random.default_rng(seed)
    d = spec.n_covariates
    base = np.asarray(spec.baseline_coef)
    contrast = np.asarray(spec.contrast_coef)
    total = 0.0
    total_sq = 0.0
    remaining = draws
    while remaining > 0:
        m = min(chunk, remaining)
        covs = rng.uniform(spec.uniform_low, spec.uniform_high, size=(m, d))
        x = np.hstack([np.ones((m, 1)), covs])
        eps = spec.noise_sd * rng.standard_normal(m)
        y0 = x @ base + eps
        y1 = y0 + x @ contrast
        chosen = np.where(x @ coef > 0.0, y1, y0)
        total += float(chosen.sum())
        total_sq += float((chosen * chosen).sum())
        remaining -= m
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0)
    return mean, math.sqrt(var / draws)


@dataclass(frozen=True)
class McSummary:
    """Aggregate of a coverage/length Monte Carlo study."""

    n: int
    t_requested: int
    t_completed: int
    n_failures: int
    coord_names: tuple[str, ...]
    true_beta: np.ndarray
    mean_beta: np.ndarray
    coverage: np.ndarray | None
    mean_length: np.ndarray | None
    value_coverage: float
    true_value: float
    true_value_se: float
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "t_requested": self.t_requested,
            "t_completed": self.t_completed,
            "n_failures": self.n_failures,
            "coord_names": list(self.coord_names),
            "true_beta": [float(v) for v in self.true_beta],
            "mean_beta": [float(v) for v in self.mean_beta],
            "coverage": None if self.coverage is None else [float(v) for v in self.coverage],
            "mean_length": None if self.mean_length is None else [float(v) for v in self.mean_length],
            "value_coverage": self.value_coverage,
            "true_value": self.true_value,
            "true_value_se": self.true_value_se,
            "settings": self.settings,
        }


def _coverage_rep(t: int, spec: DgpSpec, seed: int, search_config: SearchConfig,
                  estimator_spec: EstimatorSpec, n_draws: int, epsilon: float,
                  refit: bool, level: float, eigenvalue_floor: float):
    rep_seed = _derive_seed(seed, t)
    data = generate(replace(spec, seed=rep_seed))
    oracle_fns = oracle_functions(spec) if estimator_spec.method == "oracle" else None
    nf = fit_nuisance(data, estimator_spec, oracle_fns=oracle_fns)
    cfg = replace(search_config, seed=_derive_seed(seed, t, 1))
    result = search(data, nf, cfg)
    report = value_ci(data, nf, result.beta_hat, level=level)
    out = {
        "beta_hat": result.beta_hat.coef,
        "value": report.value,
        "value_ci": report.ci,
    }
    if n_draws > 0:
        evaluator = ValueEvaluator(data, nf)
        hess = hessian_fd(
            evaluator.value, result.beta_hat, epsilon,
            eigenvalue_floor=eigenvalue_floor,
        )
        boot = bootstrap_draws(
            data, nf, result.beta_hat, hess, n_draws,
            refit=refit, estimator_spec=estimator_spec if refit else None,
            seed=rep_seed, search_config=cfg, level=level,
        )
        out["ci_lo"] = boot.ci_lo
        out["ci_hi"] = boot.ci_hi
    return out


def run_coverage_study(spec: DgpSpec, t_reps: int, *, search_config: SearchConfig,
                       estimator_spec: EstimatorSpec, n_draws: int = 400,
                       epsilon: float = 0.5, refit: bool = False, level: float = 0.95,
                       seed: int = 0, n_jobs: int = 1, true_value: float | None = None,
                       true_value_se: float = 0.0, oracle_draws: int = 2_000_000,
                       eigenvalue_floor: float = 1e-6) -> McSummary:
    """Repeat generate -> fit -> search -> bootstrap; aggregate coverage.

    Coverage of the coefficient CIs is scored on the non-intercept
    coordinates against the generator's optimal rule. The value-CI check
    widens each interval by twice the truth oracle's standard error, so
    Monte Carlo error in the truth cannot flip a hit into a miss.
    With n_draws=0 the bootstrap stage is skipped (estimation-only study).
    """
    if t_reps < 1:
        raise DataError("need at least one replication")
    if true_value is None:
        true_value, true_value_se = true_value_oracle(spec, spec.true_beta, oracle_draws,
                                                      seed=_derive_seed(seed, 999_983))
    rep_args = dict(
        spec=spec, seed=seed, search_config=search_config, estimator_spec=estimator_spec,
        n_draws=n_draws, epsilon=epsilon, refit=refit, level=level,
        eigenvalue_floor=eigenvalue_floor,
    )

    def safe_rep(t):
        try:
            return _coverage_rep(t, **rep_args)
        except LinregimeError as exc:
            return {"error": str(exc)}

    if n_jobs == 1:
        rows = [safe_rep(t) for t in range(t_reps)]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(safe_rep)(t) for t in range(t_reps))

    failures = [r for r in rows if "error" in r]
    rows = [r for r in rows if "error" not in r]
    if not rows:
        raise LinregimeError("every replication failed; first error: %s" % failures[0]["error"])

    scored = list(range(1, spec.n_covariates + 1))  # skip the intercept coordinate
    names = tuple("x%d" % j for j in range(1, spec.n_covariates + 1))
    beta0 = spec.true_beta.coef
    mean_beta = np.mean(np.vstack([r["beta_hat"] for r in rows]), axis=0)
    slack = 2.0 * true_value_se
    value_hits = [
        r["value_ci"][0] - slack <= true_value <= r["value_ci"][1] + slack for r in rows
    ]
    coverage = mean_length = None
    if n_draws > 0:
        lo = np.vstack([r["ci_lo"] for r in rows])
        hi = np.vstack([r["ci_hi"] for r in rows])
        hits = (lo[:, scored] <= beta0[scored]) & (beta0[scored] <= hi[:, scored])
        coverage = hits.mean(axis=0)
        mean_length = (hi[:, scored] - lo[:, scored]).mean(axis=0)

    return McSummary(
        n=spec.n,
        t_requested=t_reps,
        t_completed=len(rows),
        n_failures=len(failures),
        coord_names=names,
        true_beta=beta0,
        mean_beta=mean_beta,
        coverage=coverage,
        mean_length=mean_length,
        value_coverage=float(np.mean(value_hits)),
        true_value=float(true_value),
        true_value_se=float(true_value_se),
        settings={
            "n_draws": n_draws,
            "epsilon": epsilon,
            "refit": refit,
            "level": level,
            "seed": seed,
            "estimator": estimator_spec.to_dict(),
            "search": search_config.to_dict(),
        },
    )


@dataclass(frozen=True)
class RateReport:
    """Median estimation error by sample size with the log-log slope."""

    sizes: tuple[int, ...]
    median_errors: tuple[float, ...]
    slope: float
    reps: int

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "median_errors": list(self.median_errors),
            "slope": self.slope,
            "reps": self.reps,
        }


def rate_diagnostic(spec: DgpSpec, n_list, reps: int, *, search_config: SearchConfig,
                    estimator_spec: EstimatorSpec | None = None, seed: int = 0,
                    n_jobs: int = 1) -> RateReport:
    """Median coefficient error at several sample sizes, plus its decay slope."""
    sizes = sorted({int(n) for n in n_list})
    if len(sizes) < 2:
        raise DataError("need at least 2 distinct sample sizes")
    if reps < 1:
        raise DataError("need at least one replication per size")
    est = estimator_spec or EstimatorSpec(method="oracle")
    beta0 = spec.true_beta.coef

    def one(n_val, r):
        rep_seed = _derive_seed(seed, n_val, r)
        data = generate(replace(spec, n=n_val, seed=rep_seed))
        oracle_fns = oracle_functions(spec) if est.method == "oracle" else None
        nf = fit_nuisance(data, est, oracle_fns=oracle_fns)
        cfg = replace(search_config, seed=_derive_seed(seed, n_val, r, 1))
        result = search(data, nf, cfg)
        return float(np.linalg.norm(result.beta_hat.coef - beta0))

    jobs = [(n_val, r) for n_val in sizes for r in range(reps)]
    if n_jobs == 1:
        errors = [one(*job) for job in jobs]
    else:
        errors = Parallel(n_jobs=n_jobs)(delayed(one)(*job) for job in jobs)
    errors = np.asarray(errors).reshape(len(sizes), reps)
    medians = np.median(errors, axis=1)
    slope = float(np.polyfit(np.log(sizes), np.log(medians), 1)[0])
    return RateReport(
        sizes=tuple(sizes),
        median_errors=tuple(float(m) for m in medians),
        slope=slope,
        reps=reps,
    )


def format_coverage_table(summaries: dict[float, McSummary]) -> str:
    """Human-readable grid: coordinates x (coverage, length) by epsilon."""
    if not summaries:
        return "(no results)"
    eps_values = sorted(summaries)
    first = summaries[eps_values[0]]
    names = first.coord_names
    header = ["", "Est", ""] + ["eps=%g" % e for e in eps_values]
    widths = [10, 9, 9] + [10] * len(eps_values)

    def fmt_row(cells):
        return "  ".join(str(c).rjust(w) for c, w in zip(cells, widths))

    lines = [fmt_row(header)]
    for j, name in enumerate(names):
        est = first.mean_beta[j + 1]
        cov_cells = [
            "%.3f" % summaries[e].coverage[j] if summaries[e].coverage is not None else "-"
            for e in eps_values
        ]
        len_cells = [
            "%.3f" % summaries[e].mean_length[j] if summaries[e].mean_length is not None else "-"
            for e in eps_values
        ]
        lines.append(fmt_row([name, "%.3f" % est, "Coverage"] + cov_cells))
        lines.append(fmt_row(["", "", "Length"] + len_cells))
    return "\n".join(lines)
