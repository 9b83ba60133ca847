import numpy as np
import pytest
from scipy.special import expit

from linregime import (
    DataError,
    DgpSpec,
    EstimatorSpec,
    SearchConfig,
    format_coverage_table,
    generate,
    generate_full,
    rate_diagnostic,
    run_coverage_study,
    true_value_oracle,
)

FAST_SEARCH = SearchConfig(population=32, generations=20, seed=0)
ORACLE = EstimatorSpec(method="oracle")


class TestGenerator:
    def test_deterministic(self):
        a = generate(DgpSpec(n=200, seed=42))
        b = generate(DgpSpec(n=200, seed=42))
        np.testing.assert_array_equal(a.covariates, b.covariates)
        np.testing.assert_array_equal(a.treatments, b.treatments)
        np.testing.assert_array_equal(a.outcomes, b.outcomes)

    def test_covariate_moments(self):
        # uniform on [1-sqrt(3), 1+sqrt(3)]: mean 1, variance (2 sqrt 3)^2/12 = 1
        data = generate(DgpSpec(n=1_000_000, seed=1))
        for j in (1, 2):
            assert abs(data.covariates[:, j].mean() - 1.0) < 0.01
            assert abs(data.covariates[:, j].var() - 1.0) < 0.01

    def test_true_rule_normalization(self):
        beta0 = DgpSpec(n=10, seed=0).true_beta.coef
        np.testing.assert_allclose(beta0, [0.0, 2.0 / np.sqrt(5.0), 1.0 / np.sqrt(5.0)], atol=1e-12)
        np.testing.assert_allclose(beta0, [0.0, 0.894, 0.447], atol=5e-4)

    def test_zero_noise_hook_makes_outcome_deterministic(self):
        full = generate_full(DgpSpec(n=500, seed=3), noise_sd=0.0)
        data = full["dataset"]
        x = data.covariates
        expected = (2.0 - 1.5 * x[:, 1] - 1.5 * x[:, 2]
                    + data.treatments * (2.0 * x[:, 1] + x[:, 2]))
        np.testing.assert_allclose(data.outcomes, expected, atol=1e-12)

    def test_binned_propensities_match_logistic(self):
        data = generate(DgpSpec(n=100_000, seed=8))
        x = data.covariates
        logits = -1.0 + 0.8 * x[:, 1] + 0.8 * x[:, 2]
        bins = np.quantile(logits, np.linspace(0, 1, 11))
        for k in range(10):
            mask = (logits >= bins[k]) & (logits < bins[k + 1])
            m = int(mask.sum())
            if m < 100:
                continue
            frac = data.treatments[mask].mean()
            center = expit(logits[mask].mean())
            # binomial noise plus within-bin curvature slack
            tol = 3.0 * np.sqrt(center * (1 - center) / m) + 0.01
            assert abs(frac - center) < tol

    def test_spec_validation(self):
        with pytest.raises(DataError):
            DgpSpec(n=0)
        with pytest.raises(DataError):
            DgpSpec(n=5, noise_sd=0.0)
        with pytest.raises(DataError):
            DgpSpec(n=5, propensity_coef=(0.0, 1.0))


class TestTruthOracle:
    def test_treat_everyone(self):
        # E[2 + 0.5 X1 - 0.5 X2] = 2 at unit means
        spec = DgpSpec(n=10, seed=0)
        val, se = true_value_oracle(spec, np.array([1.0, 0.0, 0.0]), 400_000, seed=2)
        assert val == pytest.approx(2.0, abs=5 * se + 0.005)

    def test_treat_no_one(self):
        # E[2 - 1.5 X1 - 1.5 X2] = -1 at unit means
        spec = DgpSpec(n=10, seed=0)
        val, se = true_value_oracle(spec, np.array([-1.0, 0.0, 0.0]), 400_000, seed=2)
        assert val == pytest.approx(-1.0, abs=5 * se + 0.005)

    def test_true_rule_is_optimal(self, rng):
        spec = DgpSpec(n=10, seed=0)
        v0, se0 = true_value_oracle(spec, spec.true_beta, 300_000, seed=5)
        for _ in range(100):
            beta = rng.normal(size=3)
            beta /= np.linalg.norm(beta)
            v, se = true_value_oracle(spec, beta, 30_000, seed=int(rng.integers(2**31)))
            assert v <= v0 + 2.0 * (se + se0)

    def test_draw_count_validated(self):
        with pytest.raises(DataError):
            true_value_oracle(DgpSpec(n=5, seed=0), np.array([1.0, 0.0, 0.0]), 0)


class TestCoverageStudy:
    def test_smoke_single_rep(self):
        spec = DgpSpec(n=500, seed=0)
        s = run_coverage_study(spec, 1, search_config=FAST_SEARCH, estimator_spec=ORACLE,
                               n_draws=5, epsilon=0.5, seed=1, oracle_draws=100_000)
        assert s.t_completed == 1 and s.n_failures == 0
        assert s.coord_names == ("x1", "x2")
        assert s.coverage.shape == (2,) and s.mean_length.shape == (2,)
        assert 0.0 <= s.value_coverage <= 1.0
        d = s.to_dict()
        assert d["n"] == 500 and len(d["mean_beta"]) == 3

    def test_estimation_only_when_no_draws(self):
        spec = DgpSpec(n=400, seed=0)
        s = run_coverage_study(spec, 2, search_config=FAST_SEARCH, estimator_spec=ORACLE,
                               n_draws=0, seed=1, oracle_draws=100_000)
        assert s.coverage is None and s.mean_length is None
        assert s.mean_beta.shape == (3,)

    def test_parallel_matches_serial(self):
        spec = DgpSpec(n=300, seed=0)
        kwargs = dict(search_config=FAST_SEARCH, estimator_spec=ORACLE,
                      n_draws=4, epsilon=0.5, seed=3, oracle_draws=50_000)
        a = run_coverage_study(spec, 3, n_jobs=1, **kwargs)
        b = run_coverage_study(spec, 3, n_jobs=2, **kwargs)
        np.testing.assert_array_equal(a.mean_beta, b.mean_beta)
        np.testing.assert_array_equal(a.coverage, b.coverage)

    def test_failed_replications_counted_not_dropped(self):
        # a near-degenerate assignment rate makes some replications draw a
        # single arm; those must be excluded with an explicit count
        spec = DgpSpec(n=60, seed=0, propensity_coef=(4.0, 0.0, 0.0))
        with pytest.warns(UserWarning):
            s = run_coverage_study(
                spec, 12, search_config=SearchConfig(population=16, generations=5, seed=0),
                estimator_spec=EstimatorSpec(method="logistic"),
                n_draws=0, seed=5, oracle_draws=20_000,
            )
        assert s.n_failures > 0
        assert s.t_completed + s.n_failures == 12

    def test_table_formatting(self):
        spec = DgpSpec(n=300, seed=0)
        s = run_coverage_study(spec, 2, search_config=FAST_SEARCH, estimator_spec=ORACLE,
                               n_draws=4, epsilon=0.5, seed=3, oracle_draws=50_000)
        table = format_coverage_table({0.5: s})
        assert "eps=0.5" in table and "Coverage" in table and "Length" in table
        assert "x1" in table and "x2" in table


class TestGeneralizedDesigns:
    def test_three_covariate_generator_end_to_end(self):
        from linregime import ValueEvaluator, fit_nuisance, oracle_functions, search
        from linregime import EstimatorSpec as ES

        spec = DgpSpec(
            n=1500, seed=4,
            propensity_coef=(0.0, 0.5, 0.5, -0.5),
            baseline_coef=(1.0, -1.0, 0.0, 1.0),
            contrast_coef=(0.0, 1.0, 1.0, -1.0),
            noise_sd=0.5,
        )
        data = generate(spec)
        assert data.n_covariates == 4
        nf = fit_nuisance(data, ES(method="oracle"), oracle_fns=oracle_functions(spec))
        res = search(data, nf, SearchConfig(population=48, generations=30, seed=2))
        # found direction correlates with the true rule
        assert float(res.beta_hat.coef @ spec.true_beta.coef) > 0.9


class TestRateDiagnostic:
    def test_requires_two_sizes(self):
        with pytest.raises(DataError, match="2 distinct"):
            rate_diagnostic(DgpSpec(n=100, seed=0), [1000], 3, search_config=FAST_SEARCH)

    def test_errors_positive_and_decreasing(self):
        spec = DgpSpec(n=100, seed=0)
        rep = rate_diagnostic(spec, [300, 4800], 8, search_config=FAST_SEARCH, seed=2, n_jobs=2)
        assert all(m > 0 for m in rep.median_errors)
        assert rep.median_errors[1] < rep.median_errors[0]
        assert rep.slope < 0
