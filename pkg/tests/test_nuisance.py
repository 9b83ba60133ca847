import numpy as np
import pytest
from scipy.special import expit

from linregime import (
    DataError,
    Dataset,
    DgpSpec,
    EstimatorSpec,
    SeparationError,
    fit_nuisance,
    fit_outcome_means,
    fit_propensity,
    generate,
    oracle_functions,
    oracle_nuisance,
)
from linregime.nuisance import AdditiveSmoother, _irls_logistic, silverman_bandwidth


def _dataset(x, a, y, intercept=False, names=None):
    names = names or tuple("x%d" % j for j in range(np.atleast_2d(x).shape[1]))
    return Dataset(x, a, y, names, has_intercept=intercept)


class TestLogisticPropensity:
    def test_balanced_intercept_only(self):
        data = _dataset(np.ones((4, 1)), np.array([0, 1, 0, 1]), np.zeros(4),
                        intercept=True, names=("intercept",))
        fit = fit_propensity(data, EstimatorSpec(method="logistic"))
        np.testing.assert_allclose(fit.values, 0.5, atol=1e-12)

    def test_recovers_generator_coefficients(self):
        # logistic fit on a large sample from the logistic generator
        spec = DgpSpec(n=20000, seed=7)
        data = generate(spec)
        fit = fit_propensity(data, EstimatorSpec(method="logistic"))
        coef = np.array(fit.diagnostics["coef"])
        np.testing.assert_allclose(coef, [-1.0, 0.8, 0.8], atol=0.1)

    def test_clipping(self, rng):
        x = np.column_stack([np.ones(200), rng.normal(size=200) * 3])
        eta = -4.0 + 4.0 * x[:, 1]
        a = (rng.uniform(size=200) < expit(eta)).astype(int)
        if a.min() == a.max():
            a[0] = 1 - a[0]
        data = _dataset(x, a, np.zeros(200), intercept=True, names=("intercept", "x1"))
        fit = fit_propensity(data, EstimatorSpec(method="logistic", clip=(0.01, 0.99)))
        assert fit.values.min() >= 0.01 and fit.values.max() <= 0.99
        assert fit.diagnostics["n_clipped"] > 0

    def test_score_equations_hold(self, rng):
        x = np.column_stack([np.ones(500), rng.normal(size=500)])
        a = (rng.uniform(size=500) < expit(0.3 - 0.7 * x[:, 1])).astype(int)
        coef, n_iter, score_norm = _irls_logistic(x, a.astype(float), tol=1e-8, max_iter=100)
        assert score_norm < 1e-6

    def test_perfect_separation_raises(self):
        x = np.column_stack([np.ones(20), np.linspace(-1, 1, 20)])
        a = (x[:, 1] > 0).astype(int)
        data = _dataset(x, a, np.zeros(20), intercept=True, names=("intercept", "x1"))
        with pytest.raises(SeparationError):
            fit_propensity(data, EstimatorSpec(method="logistic"))

    def test_single_arm_rejected(self):
        data = _dataset(np.ones((3, 1)), np.array([1, 1, 1]), np.zeros(3))
        with pytest.raises(DataError, match="both treatment arms"):
            fit_propensity(data, EstimatorSpec())


class TestKernelPropensity:
    def test_constant_covariate_gives_base_rate(self):
        data = _dataset(np.ones((8, 1)), np.array([0, 1, 0, 1, 0, 1, 1, 0]), np.zeros(8),
                        intercept=True, names=("intercept",))
        fit = fit_propensity(data, EstimatorSpec(method="local-linear-kernel"))
        np.testing.assert_allclose(fit.values, 0.5, atol=1e-9)

    def test_monotone_signal_recovered(self, rng):
        n = 3000
        x1 = rng.uniform(-2, 2, n)
        a = (rng.uniform(size=n) < expit(1.5 * x1)).astype(int)
        data = _dataset(np.column_stack([np.ones(n), x1]), a, np.zeros(n),
                        intercept=True, names=("intercept", "x1"))
        fit = fit_propensity(data, EstimatorSpec(method="local-linear-kernel"))
        rmse = np.sqrt(np.mean((fit.values - expit(1.5 * x1)) ** 2))
        assert rmse < 0.06


class TestOutcomeMeans:
    def test_constant_response_both_arms(self):
        y = np.full(10, 3.0)
        a = np.array([0, 1] * 5)
        x = np.column_stack([np.ones(10), np.linspace(0, 1, 10)])
        data = _dataset(x, a, y, intercept=True, names=("intercept", "x1"))
        for method in ("logistic", "local-linear-kernel"):
            mu0, mu1 = fit_outcome_means(data, EstimatorSpec(method=method))
            np.testing.assert_allclose(mu0.values, 3.0, atol=1e-9)
            np.testing.assert_allclose(mu1.values, 3.0, atol=1e-9)

    @pytest.mark.parametrize("bandwidth", [0.05, 0.3, 2.0])
    def test_local_linear_reproduces_affine_arm(self, bandwidth, rng):
        # one arm with y = 2x exactly: local-linear is exact for affine
        # targets at points interior to the arm's covariate range
        n = 80
        x = np.sort(rng.uniform(0, 1, n)).reshape(-1, 1)
        a = np.array([1, 0] * (n // 2))
        y = 2.0 * x[:, 0]
        data = _dataset(x, a, y)
        mu0, mu1 = fit_outcome_means(
            data, EstimatorSpec(method="local-linear-kernel", bandwidth=bandwidth)
        )
        for arm, fit in ((1, mu1), (0, mu0)):
            arm_x = x[a == arm, 0]
            interior = (x[:, 0] >= arm_x.min()) & (x[:, 0] <= arm_x.max())
            np.testing.assert_allclose(fit.values[interior], 2.0 * x[interior, 0], atol=1e-8)

    def test_generator_arm_mean_mse(self):
        # treated-arm mean is affine in the covariates: additive fit gets it
        spec = DgpSpec(n=20000, seed=5)
        data = generate(spec)
        mu0, mu1 = fit_outcome_means(data, EstimatorSpec(method="local-linear-kernel"))
        x = data.covariates
        truth1 = 2.0 + 0.5 * x[:, 1] - 0.5 * x[:, 2]
        mse = float(np.mean((mu1.values - truth1) ** 2))
        assert mse < 0.05, mse

    def test_empty_arm_rejected(self):
        data = _dataset(np.ones((4, 1)), np.array([1, 1, 1, 0]), np.zeros(4))
        with pytest.raises(DataError, match="fewer than 2"):
            fit_outcome_means(data, EstimatorSpec())

    def test_singular_design_fallback_recorded(self):
        # treated covariates sit in two point masses: the local design is
        # singular near each mass at a small bandwidth, so the smoother
        # degrades to local-constant there and records it
        x = np.array([[1.0], [1.0], [1.0], [2.0], [1.5], [2.5], [0.5], [2.0]])
        a = np.array([1, 1, 1, 1, 0, 0, 0, 0])
        y = np.array([1.0, 2.0, 3.0, 10.0, 0.0, 0.0, 0.0, 0.0])
        data = _dataset(x, a, y)
        mu0, mu1 = fit_outcome_means(data, EstimatorSpec(method="local-linear-kernel", bandwidth=0.02))
        assert mu1.diagnostics["local_constant_fallbacks"] > 0
        # at the mass x=1 the local-constant estimate is the mass mean
        np.testing.assert_allclose(mu1.values[0], 2.0, atol=1e-9)
        np.testing.assert_allclose(mu1.values[3], 10.0, atol=1e-9)


class TestOracle:
    def test_constant_half(self, rng):
        data = _dataset(rng.normal(size=(5, 2)), np.array([0, 1, 0, 1, 0]), rng.normal(size=5))
        nf = oracle_nuisance(data, lambda x: np.full(x.shape[0], 0.5),
                             lambda x: np.zeros(x.shape[0]), lambda x: np.ones(x.shape[0]))
        np.testing.assert_array_equal(nf.e_hat, 0.5)

    def test_generator_truth_pointwise(self):
        spec = DgpSpec(n=200, seed=1)
        data = generate(spec)
        e_fn, mu0_fn, mu1_fn = oracle_functions(spec)
        nf = fit_nuisance(data, EstimatorSpec(method="oracle"), oracle_fns=(e_fn, mu0_fn, mu1_fn))
        x = data.covariates
        np.testing.assert_allclose(
            nf.e_hat, np.clip(expit(-1.0 + 0.8 * x[:, 1] + 0.8 * x[:, 2]), 0.01, 0.99), atol=1e-12
        )
        np.testing.assert_allclose(nf.mu0_hat, 2.0 - 1.5 * x[:, 1] - 1.5 * x[:, 2], atol=1e-12)
        np.testing.assert_allclose(nf.mu1_hat, 2.0 + 0.5 * x[:, 1] - 0.5 * x[:, 2], atol=1e-12)

    def test_expit_hand_value(self):
        # logit e = -1 + 0.8 + 0.8 = 0.6 at (1, 1, 1)
        spec = DgpSpec(n=10, seed=0)
        e_fn, _, _ = oracle_functions(spec)
        val = float(e_fn(np.array([[1.0, 1.0, 1.0]]))[0])
        assert val == pytest.approx(0.6456563062, abs=1e-9)


class TestInvariants:
    def test_propensity_strictly_inside_unit_interval(self, rng):
        spec = DgpSpec(n=500, seed=9)
        data = generate(spec)
        for method in ("logistic", "local-linear-kernel"):
            nf = fit_nuisance(data, EstimatorSpec(method=method))
            assert np.all(nf.e_hat > 0.0) and np.all(nf.e_hat < 1.0)

    def test_permutation_invariance(self, rng):
        spec = DgpSpec(n=400, seed=13)
        data = generate(spec)
        perm = rng.permutation(data.n)
        permuted = Dataset(
            data.covariates[perm], data.treatments[perm], data.outcomes[perm],
            data.column_names, has_intercept=True,
        )
        for method in ("logistic", "local-linear-kernel"):
            nf = fit_nuisance(data, EstimatorSpec(method=method))
            nf_perm = fit_nuisance(permuted, EstimatorSpec(method=method))
            np.testing.assert_array_equal(nf.e_hat[perm], nf_perm.e_hat)
            np.testing.assert_array_equal(nf.mu0_hat[perm], nf_perm.mu0_hat)
            np.testing.assert_array_equal(nf.mu1_hat[perm], nf_perm.mu1_hat)

    def test_cross_fit_flag_runs(self):
        spec = DgpSpec(n=300, seed=21)
        data = generate(spec)
        nf = fit_nuisance(data, EstimatorSpec(method="logistic", cross_fit=True, n_folds=3))
        assert np.all((nf.e_hat >= 0.01) & (nf.e_hat <= 0.99))

    def test_overlap_warning_emitted(self, rng):
        x = np.column_stack([np.ones(300), rng.normal(size=300) * 4])
        a = (rng.uniform(size=300) < expit(3.0 * x[:, 1])).astype(int)
        if a.min() == a.max():
            a[0] = 1 - a[0]
        data = _dataset(x, a, np.zeros(300), intercept=True, names=("intercept", "x1"))
        with pytest.warns(UserWarning, match="clipped"):
            fit_nuisance(data, EstimatorSpec(method="local-linear-kernel"))


class TestSmootherPieces:
    def test_silverman_rule(self):
        x = np.arange(100, dtype=float)
        h = silverman_bandwidth(x)
        assert h == pytest.approx(1.06 * x.std(ddof=1) * 100 ** (-0.2))

    def test_additive_two_covariate_affine(self, rng):
        n = 500
        x = rng.uniform(-1, 1, size=(n, 2))
        y = 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1]
        model = AdditiveSmoother(grid_size=201, cycles=20).fit(x, y)
        np.testing.assert_allclose(model.fitted_, y, atol=1e-6)

    def test_spec_validation(self):
        with pytest.raises(DataError):
            EstimatorSpec(method="nonsense")
        with pytest.raises(DataError):
            EstimatorSpec(bandwidth=-1.0)
        with pytest.raises(DataError):
            EstimatorSpec(clip=(0.5, 0.4))
