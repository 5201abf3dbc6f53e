import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gamebo import gp
from gamebo.errors import FactorizationError, ValidationError
from gamebo.gp import GpSurrogate, KernelSpec

import oracles


def random_model(rng, n=10, dim=2, family="matern-5/2", nugget=1e-8):
    X = rng.random((n, dim))
    y = np.sin(3 * X).sum(axis=1) + 0.1 * rng.standard_normal(n)
    kernel = KernelSpec(family, rng.uniform(0.3, 1.0, dim), rng.uniform(0.5, 2.0), nugget)
    return GpSurrogate(X, y, kernel), X, y


class TestKernel:
    def test_zero_distance_is_variance_plus_nugget(self):
        k = KernelSpec("matern-5/2", [0.3, 0.4], 2.0, 0.1)
        x = np.array([[0.2, 0.7]])
        assert k(x)[0, 0] == pytest.approx(2.1)
        assert k.diag(x)[0] == pytest.approx(2.1)

    @pytest.mark.parametrize("family", ["matern-5/2", "squared-exponential"])
    def test_matches_loop_oracle(self, family):
        rng = np.random.default_rng(0)
        A, B = rng.random((7, 3)), rng.random((5, 3))
        B[0] = A[2]
        k = KernelSpec(family, [0.2, 0.5, 1.3], 1.7, 0.01)
        ref = oracles.kernel_matrix(family, [0.2, 0.5, 1.3], 1.7, 0.01, A, B)
        np.testing.assert_allclose(k(A, B), ref, atol=1e-13)

    def test_gram_is_psd(self):
        rng = np.random.default_rng(1)
        X = rng.random((30, 2))
        K = KernelSpec("matern-5/2", [0.4, 0.4], 1.0)(X)
        np.testing.assert_allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() > -1e-10

    @pytest.mark.parametrize("kwargs", [dict(lengthscales=[0.0]), dict(lengthscales=[-1.0]),
                                        dict(variance=0.0), dict(nugget=-1e-3)])
    def test_invalid_parameters(self, kwargs):
        base = dict(family="matern-5/2", lengthscales=[0.5], variance=1.0, nugget=0.0)
        base.update(kwargs)
        with pytest.raises(ValidationError):
            KernelSpec(**base)

    def test_unknown_family(self):
        with pytest.raises(ValidationError):
            KernelSpec("linear", [0.5], 1.0)


class TestFitPredict:
    def test_constant_outputs(self):
        m = gp.fit([[0.1], [0.8]], [3.0, 3.0])
        mean, _ = gp.predict(m, np.linspace(0, 1, 11)[:, None])
        np.testing.assert_allclose(mean, 3.0)

    def test_interpolates_training_points_without_nugget(self):
        rng = np.random.default_rng(2)
        X = rng.random((12, 2))
        y = np.cos(4 * X[:, 0]) + X[:, 1]
        m = GpSurrogate(X, y, KernelSpec("matern-5/2", [0.5, 0.5], 1.0, 0.0))
        mean, var = m.predict(X)
        np.testing.assert_allclose(mean, y, atol=1e-8)
        np.testing.assert_allclose(var, 0.0, atol=1e-8)

    def test_fitted_model_interpolates(self):
        x = np.linspace(0, 1, 20)[:, None]
        y = np.sin(2 * np.pi * x[:, 0])
        m = gp.fit(x, y)
        mean, var = m.predict(x)
        np.testing.assert_allclose(mean, y, atol=1e-6)
        assert np.all(var >= 0)

    def test_sine_fit_matches_textbook_oracle(self):
        x = np.linspace(0, 1, 20)[:, None]
        y = np.sin(2 * np.pi * x[:, 0])
        m = gp.fit(x, y, seed=3)
        q = np.linspace(0, 1, 100)[:, None]
        k = m.kernel
        mu, var, _ = oracles.gp_posterior(x, y, k.family, k.lengthscales, k.variance, k.nugget, m.mean, q)
        mean, v = m.predict(q)
        np.testing.assert_allclose(mean, mu, atol=1e-8)
        # variances suffer cancellation in the explicit-inverse oracle
        np.testing.assert_allclose(v, np.maximum(var, 0), atol=1e-6 * k.variance)

    def test_gls_mean_matches_oracle(self):
        rng = np.random.default_rng(4)
        m, X, y = random_model(rng, nugget=1e-6)
        K = oracles.kernel_matrix(m.kernel.family, m.kernel.lengthscales, m.kernel.variance,
                                  m.kernel.nugget, X, X)
        assert m.mean == pytest.approx(oracles.gls_mean(K, y), rel=1e-9)

    def test_prior_reversion_far_from_data(self):
        k = KernelSpec("squared-exponential", [0.01], 2.0, 0.0)
        m = GpSurrogate([[0.0]], [5.0], k, mean=1.0)
        mean, var = m.predict([[0.5]])
        assert mean[0] == pytest.approx(1.0, abs=1e-6)
        assert var[0] == pytest.approx(2.0, abs=1e-6)

    def test_random_models_match_dense_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            m, X, y = random_model(rng, n=10, dim=3, nugget=1e-6)
            q = rng.random((50, 3))
            k = m.kernel
            mu, var, _ = oracles.gp_posterior(X, y, k.family, k.lengthscales, k.variance, k.nugget, m.mean, q)
            mean, v = m.predict(q)
            np.testing.assert_allclose(mean, mu, atol=1e-8)
            np.testing.assert_allclose(v, var, atol=1e-8)

    def test_factorization_reconstructs_gram(self):
        rng = np.random.default_rng(6)
        m, X, _ = random_model(rng, n=25)
        K = m.kernel(X) + m.jitter * np.eye(len(X))
        L = m.factor
        assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) < 1e-8

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        m, X, y = random_model(rng, n=15)
        perm = rng.permutation(len(X))
        m2 = GpSurrogate(X[perm], y[perm], m.kernel)
        q = rng.random((20, 2))
        for a, b in zip(m.predict(q), m2.predict(q)):
            np.testing.assert_allclose(a, b, atol=1e-10)

    def test_fit_beats_random_hyperparameters(self):
        rng = np.random.default_rng(8)
        X = rng.random((25, 2))
        y = np.sin(5 * X[:, 0]) * np.cos(3 * X[:, 1])
        m = gp.fit(X, y, seed=1)
        best = m.log_marginal_likelihood()
        for _ in range(10):
            ls = np.exp(rng.uniform(np.log(1e-2), np.log(10), 2))
            var = np.exp(rng.uniform(-3, 3))
            k = KernelSpec("matern-5/2", ls, var, 1e-8 * var)
            assert best >= m.log_marginal_likelihood(k, mean=rng.normal())

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(9)
        X = rng.random((15, 2))
        y = X.sum(axis=1) ** 2
        a, b = gp.fit(X, y, seed=11), gp.fit(X, y, seed=11)
        np.testing.assert_array_equal(a.kernel.lengthscales, b.kernel.lengthscales)
        assert a.kernel.variance == b.kernel.variance

    def test_lengthscales_within_bounds(self):
        rng = np.random.default_rng(10)
        X = rng.random((15, 3))
        m = gp.fit(X, X[:, 0] * 3 + 0.01 * np.sin(40 * X[:, 1]))
        lo, hi = gp.LENGTHSCALE_BOUNDS
        assert np.all(m.kernel.lengthscales >= lo * (1 - 1e-9))
        assert np.all(m.kernel.lengthscales <= hi * (1 + 1e-9))

    def test_estimated_nugget(self):
        rng = np.random.default_rng(12)
        X = rng.random((30, 1))
        y = np.sin(6 * X[:, 0]) + 0.1 * rng.standard_normal(30)
        m = gp.fit(X, y, estimate_nugget=True)
        rel = m.kernel.nugget / m.kernel.variance
        assert gp.NUGGET_BOUNDS[0] * 0.99 <= rel <= gp.NUGGET_BOUNDS[1] * 1.01
        assert rel > 1e-4  # the noise is found

    @pytest.mark.parametrize("outputs", [[1.0, np.nan, 2.0], [1.0, np.inf, 0.0]])
    def test_non_finite_outputs(self, outputs):
        with pytest.raises(ValidationError):
            gp.fit([[0.1], [0.5], [0.9]], outputs)

    def test_needs_two_distinct_inputs(self):
        with pytest.raises(ValidationError):
            gp.fit([[0.3], [0.3]], [1.0, 2.0])

    def test_inputs_outside_unit_box(self):
        with pytest.raises(ValidationError):
            gp.fit([[0.1], [1.5]], [1.0, 2.0])

    def test_query_dimension_mismatch(self):
        m = gp.fit([[0.1, 0.2], [0.5, 0.9], [0.9, 0.1]], [1.0, 2.0, 0.0])
        with pytest.raises(ValidationError):
            m.predict([[0.1, 0.2, 0.3]])

    def test_condition_adds_data(self):
        rng = np.random.default_rng(13)
        m, X, y = random_model(rng)
        m2 = m.condition([[0.5, 0.5]], [2.0])
        assert m2.n == m.n + 1 and m2.mean == m.mean
        assert m2.predict([[0.5, 0.5]])[0][0] == pytest.approx(2.0, abs=1e-6)


class TestJitter:
    def test_escalation_recovers_semidefinite(self):
        v = np.ones((3, 1))
        factor, jitter = gp.cholesky_with_jitter(v @ v.T, 1.0)
        assert jitter > 0
        np.testing.assert_allclose(factor @ factor.T, v @ v.T + jitter * np.eye(3), atol=1e-12)

    def test_indefinite_fails(self):
        with pytest.raises(FactorizationError):
            gp.cholesky_with_jitter(np.diag([1.0, -1.0]), 1.0)


class TestSampling:
    def setup_method(self):
        rng = np.random.default_rng(20)
        self.models = [random_model(rng, n=8)[0] for _ in range(2)]

    def test_marginal_consistency_single_candidate(self):
        c = np.array([[0.37, 0.61]])
        ens = gp.sample_joint(self.models, c, 4000, seed=1)
        for j, mdl in enumerate(self.models):
            mean, var = mdl.predict(c)
            z = ens.draws[:, 0, j]
            se = np.sqrt(var[0] / 4000)
            assert abs(z.mean() - mean[0]) <= 4 * se
            assert abs(z.var(ddof=1) - var[0]) <= 4 * var[0] * np.sqrt(2 / 3999)

    def test_identical_candidates_identical_columns(self):
        c = np.array([[0.2, 0.3], [0.6, 0.1], [0.2, 0.3]])
        ens = gp.sample_joint(self.models, c, 50, seed=2)
        np.testing.assert_array_equal(ens.draws[:, 0], ens.draws[:, 2])

    def test_empirical_covariance_matches_analytic(self):
        rng = np.random.default_rng(21)
        c = rng.random((5, 2))
        M = 20000
        ens = gp.sample_joint(self.models, c, M, seed=3)
        mdl = self.models[0]
        k = mdl.kernel
        _, _, cov = oracles.gp_posterior(mdl.inputs, mdl.outputs, k.family, k.lengthscales, k.variance,
                                         k.nugget, mdl.mean, c)
        emp = np.cov(ens.draws[:, :, 0].T)
        se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / M)
        assert np.all(np.abs(emp - cov) <= 3 * se + 1e-12)

    def test_ensemble_mean_converges(self):
        rng = np.random.default_rng(22)
        c = rng.random((40, 2))
        M = 1000
        ens = gp.sample_joint(self.models, c, M, seed=4)
        for j, mdl in enumerate(self.models):
            mean, var = mdl.predict(c)
            se = np.sqrt(var / M) + 1e-12
            assert np.all(np.abs(ens.draws[:, :, j].mean(axis=0) - mean) <= 5 * se)

    def test_reproducible_and_independent_across_objectives(self):
        rng = np.random.default_rng(23)
        c = rng.random((10, 2))
        a = gp.sample_joint(self.models, c, 8, seed=7)
        b = gp.sample_joint(self.models, c, 8, seed=7)
        np.testing.assert_array_equal(a.draws, b.draws)
        # swapping the second model leaves the first objective's draws unchanged
        other = random_model(np.random.default_rng(99), n=8)[0]
        d = gp.sample_joint([self.models[0], other], c, 8, seed=7)
        np.testing.assert_array_equal(a.draws[:, :, 0], d.draws[:, :, 0])

    def test_guards(self):
        c = np.zeros((3, 2))
        with pytest.raises(ValidationError):
            gp.sample_joint(self.models, c, 1)
        with pytest.raises(ValidationError):
            gp.sample_joint(self.models, np.zeros((gp.MAX_SIMULATION_SIZE + 1, 2)), 2)

    def test_marginal_ensemble_moments(self):
        rng = np.random.default_rng(24)
        c = rng.random((30, 2))
        me = gp.MarginalEnsemble(self.models, c, 3000, seed=1)
        draws = np.stack(list(me.iter_draws()))
        np.testing.assert_allclose(draws.mean(axis=0), me.means, atol=5 * np.sqrt(me.variances.max() / 3000))


class TestUpdate:
    def setup_method(self):
        rng = np.random.default_rng(30)
        self.models = [random_model(rng, n=8)[0] for _ in range(2)]
        self.c = rng.random((25, 2))
        self.ens = gp.sample_joint(self.models, self.c, 12, seed=5)

    def test_self_conditioning_is_identity(self):
        new = self.c[4]
        upd = gp.update_ensemble(self.ens, self.models, new, self.ens.draws[:, 4, :])
        np.testing.assert_allclose(upd.draws, self.ens.draws, atol=1e-10)

    def test_updated_value_is_hypothetical_value(self):
        vals = np.random.default_rng(1).standard_normal((12, 2))
        upd = gp.update_ensemble(self.ens, self.models, self.c[7], vals)
        np.testing.assert_allclose(upd.draws[:, 7, :], vals, atol=1e-10)

    def test_variance_at_new_input_vanishes_without_nugget(self):
        rng = np.random.default_rng(31)
        X = rng.random((6, 2))
        models = [GpSurrogate(X, X[:, 0] + j, KernelSpec("matern-5/2", [0.4, 0.4], 1.0, 0.0)) for j in range(2)]
        ens = gp.sample_joint(models, self.c, 16, seed=2)
        upd = gp.update_ensemble(ens, models, self.c[3], np.full((16, 2), 0.5))
        assert upd.draws[:, 3, :].var(axis=0).max() <= 1e-8

    def test_matches_reconditioning_oracle(self):
        rng = np.random.default_rng(32)
        mdl = self.models[0]
        k = mdl.kernel
        X = mdl.inputs
        P = np.vstack([X, self.c])
        K_all = oracles.kernel_matrix(k.family, k.lengthscales, k.variance, k.nugget, P, P)
        L = np.linalg.cholesky(K_all + 1e-12 * np.eye(len(P)))
        prior = rng.standard_normal((12, len(P))) @ L.T
        n = len(X)
        post = oracles.matheron(prior, K_all, np.arange(n), mdl.outputs, mdl.mean)[:, n:]
        e = 9
        hyp = rng.standard_normal(12)
        # condition each prior path on the data plus its own hypothetical value
        expected = np.empty((12, len(self.c)))
        for b in range(12):
            vals = np.r_[mdl.outputs, hyp[b]]
            expected[b] = oracles.matheron(prior[b:b + 1], K_all, np.r_[np.arange(n), n + e], vals, mdl.mean)[0, n:]
        ens = gp.PosteriorEnsemble(self.c, post[:, :, None])
        upd = gp.update_ensemble(ens, [mdl], self.c[e], hyp[:, None])
        np.testing.assert_allclose(upd.draws[:, :, 0], expected, atol=1e-6)

    def test_training_point_update_is_noop(self):
        X = self.models[0].inputs
        models = [self.models[0], GpSurrogate(X, X[:, 1], self.models[1].kernel)]
        c = np.vstack([self.c, X[2]])
        ens = gp.sample_joint(models, c, 12, seed=6)
        upd = gp.update_ensemble(ens, models, X[2], np.full((12, 2), 100.0))
        np.testing.assert_array_equal(upd.draws, ens.draws)

    def test_new_input_must_be_candidate(self):
        with pytest.raises(ValidationError):
            gp.update_ensemble(self.ens, self.models, [0.123456, 0.5], np.zeros((12, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_variances_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m, _, _ = random_model(rng, n=int(rng.integers(2, 15)), dim=int(rng.integers(1, 4)))
    _, var = m.predict(rng.random((40, m.dim)))
    assert np.all(var >= 0)
