import math

import numpy as np
import pytest

from stringgp import (
    FitConfig,
    StringModel,
    fit_mle,
    log_marginal_likelihood,
    make_model,
    predict,
    select_boundaries,
    squared_exponential,
    uniform_partition,
)
from stringgp.experiments import build_series_model, f0, motorcycle_synthetic, series_training_data
from stringgp.regression import noise_group_indices, value_cov_matrix


def gp_log_marginal(gram, noise, y):
    """Dense Gaussian evidence, the independent oracle."""
    k = gram + np.diag(noise)
    chol = np.linalg.cholesky(k)
    alpha = np.linalg.solve(chol, y)
    return float(
        -0.5 * alpha @ alpha - np.log(np.diag(chol)).sum() - 0.5 * y.size * math.log(2 * math.pi)
    )


def single_string_model(x, y, noise_var, kernel=None, domain=(0.0, 1.0)):
    kernel = kernel or squared_exponential(1.0, 0.3)
    part = uniform_partition(kernel, domain)
    return make_model(x[:, None], y, [part], noise={(1,): noise_var})


class TestLogMarginalLikelihood:
    def test_single_point_closed_form(self):
        # unit prior variance, vanishing noise: a standard normal density
        y = np.array([0.7])
        model = single_string_model(np.array([0.5]), y, 1e-12)
        expected = -0.5 * y[0] ** 2 - 0.5 * math.log(2 * math.pi)
        assert abs(log_marginal_likelihood(model) - expected) < 1e-6

    def test_uniform_single_string_equals_plain_gp(self):
        rng = np.random.default_rng(0)
        x = np.sort(rng.uniform(0.0, 1.0, 25))
        y = np.sin(3 * x) + 0.1 * rng.standard_normal(25)
        kernel = squared_exponential(0.9, 0.35)
        model = single_string_model(x, y, 0.01, kernel)
        from stringgp.kernels import eval_value

        gram = eval_value(kernel, x[:, None], x[None, :])
        oracle = gp_log_marginal(gram, np.full(25, 0.01), y)
        assert abs(log_marginal_likelihood(model) - oracle) < 1e-8

    def test_two_strings_match_dense_assembly_oracle(self):
        rng = np.random.default_rng(1)
        x = np.sort(rng.uniform(0.0, 1.0, 30))
        y = np.cos(5 * x) + 0.05 * rng.standard_normal(30)
        kernel = squared_exponential(1.0, 0.25)
        part = uniform_partition(kernel, [0.0, 0.5, 1.0])
        noise = {(1,): 0.02, (2,): 0.08}
        model = make_model(x[:, None], y, [part], noise=noise)
        # assemble the Gram by brute force from global_cov, point by point
        sm = StringModel(part)
        gram = np.empty((30, 30))
        for i in range(30):
            for j in range(30):
                gram[i, j] = sm.global_cov(x[i], x[j])[0, 0]
        groups = noise_group_indices(model)
        diag = np.array([noise[tuple(g)] for g in groups])
        oracle = gp_log_marginal(gram, diag, y)
        assert abs(log_marginal_likelihood(model) - oracle) < 1e-8

    def test_invariant_under_permutation_of_points(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0.0, 1.0, 20)
        y = rng.standard_normal(20)
        model = single_string_model(x, y, 0.1)
        perm = rng.permutation(20)
        permuted = single_string_model(x[perm], y[perm], 0.1)
        assert abs(log_marginal_likelihood(model) - log_marginal_likelihood(permuted)) < 1e-9

    def test_empty_data_rejected(self):
        model = single_string_model(np.array([0.5]), np.array([1.0]), 0.1)
        model.y = np.empty(0)
        model.x = np.empty((0, 1))
        with pytest.raises(ValueError, match="empty"):
            log_marginal_likelihood(model)

    def test_objective_smooth_in_log_hyperparameters(self):
        # central differences at two step sizes agree: the surface the
        # numeric-gradient optimiser sees is locally smooth
        rng = np.random.default_rng(3)
        x = np.sort(rng.uniform(0.0, 1.0, 20))
        y = np.sin(4 * x)
        eps = 1e-4

        def lml(log_ell):
            kernel = squared_exponential(1.0, math.exp(log_ell))
            return log_marginal_likelihood(single_string_model(x, y, 0.01, kernel))

        g_coarse = (lml(math.log(0.3) + eps) - lml(math.log(0.3) - eps)) / (2 * eps)
        g_fine = (lml(math.log(0.3) + eps / 10) - lml(math.log(0.3) - eps / 10)) / (eps / 5)
        assert abs(g_coarse - g_fine) <= 1e-3 * max(abs(g_fine), 1.0)

    def test_objective_continuous_in_boundary_position(self):
        rng = np.random.default_rng(4)
        x = np.sort(rng.uniform(0.0, 1.0, 24))
        y = np.sin(4 * x)
        kernel = squared_exponential(1.0, 0.3)

        def lml(b):
            part = uniform_partition(kernel, [0.0, b, 1.0])
            noise = {(1,): 0.01, (2,): 0.01}
            return log_marginal_likelihood(make_model(x[:, None], y, [part], noise=noise))

        base, delta = 0.471, 1e-4  # not a data point; shifts stay in one cell
        slope = abs(lml(base + delta) - lml(base)) / delta
        assert np.isfinite(slope) and slope < 1e4


class TestNoiseGroups:
    def test_groups_follow_string_cells(self):
        part = uniform_partition(squared_exponential(1.0, 0.3), [0.0, 0.5, 1.0])
        x = np.array([[0.1], [0.4], [0.6], [0.9]])
        model = make_model(x, np.zeros(4), [part])
        groups = noise_group_indices(model)
        np.testing.assert_array_equal(groups[:, 0], [1, 1, 2, 2])


class TestFitMle:
    def test_recovers_se_hyperparameters(self):
        rng = np.random.default_rng(7)
        n = 200
        x = np.sort(rng.uniform(0.0, 1.0, n))
        true = squared_exponential(1.0, 0.2)
        from stringgp.kernels import eval_value

        gram = eval_value(true, x[:, None], x[None, :])
        chol = np.linalg.cholesky(gram + 1e-10 * np.eye(n))
        y = chol @ rng.standard_normal(n) + 0.05 * rng.standard_normal(n)
        model = single_string_model(x, y, 0.01, squared_exponential(0.5, 0.4))
        result = fit_mle(model, FitConfig(restarts=2, seed=0))
        s2, ell = result.model.partitions[0].strings[0].kernel.params
        assert abs(math.sqrt(s2) - 1.0) <= 0.2 * 1.0
        assert abs(ell - 0.2) <= 0.2 * 0.2

    def test_empty_data_rejected(self):
        model = single_string_model(np.array([0.5]), np.array([1.0]), 0.1)
        model.y = np.empty(0)
        model.x = np.empty((0, 1))
        with pytest.raises(ValueError, match="empty"):
            fit_mle(model)


class TestSelectBoundaries:
    def test_single_candidate_returned_unchanged(self):
        rng = np.random.default_rng(0)
        x = np.sort(rng.uniform(0.0, 1.0, 20))
        y = np.sin(3 * x)

        def make_candidate(count):
            part = uniform_partition(
                squared_exponential(1.0, 0.3), np.linspace(0.0, 1.0, count + 2)
            )
            return make_model(x[:, None], y, [part])

        count, result, table = select_boundaries(
            make_candidate, [1], config=FitConfig(restarts=1, maxiter=40)
        )
        assert count == 1 and len(table) == 1

    def test_stationary_data_prefers_no_interior_boundary(self):
        # BIC should reject the extra string on most seeds
        wins = 0
        seeds = range(10)
        for seed in seeds:
            rng = np.random.default_rng(100 + seed)
            x = np.sort(rng.uniform(0.0, 1.0, 60))
            true = squared_exponential(1.0, 0.25)
            from stringgp.kernels import eval_value

            gram = eval_value(true, x[:, None], x[None, :])
            y = np.linalg.cholesky(gram + 1e-8 * np.eye(60)) @ rng.standard_normal(60)
            y = y + 0.1 * rng.standard_normal(60)

            def make_candidate(count):
                part = uniform_partition(true, np.linspace(0.0, 1.0, count + 2))
                return make_model(x[:, None], y, [part])

            count, _, _ = select_boundaries(
                make_candidate, [0, 1], criterion="BIC", config=FitConfig(restarts=1, maxiter=60)
            )
            wins += count == 0
        assert wins >= 0.8 * len(seeds)

    def test_regime_change_data_prefers_an_interior_boundary(self):
        t, y = series_training_data(f0)

        def make_candidate(count):
            return build_series_model(t, y, "periodic", count + 1)

        config = FitConfig(restarts=1, maxiter=80, optimize_boundaries=True)
        count, result, _ = select_boundaries(make_candidate, [0, 1], criterion="BIC", config=config)
        assert count == 1
        boundary = result.model.partitions[0].boundary_times[1]
        assert abs(boundary - 0.5) < 0.1


class TestPredict:
    def test_noiseless_interpolation_reproduces_targets(self):
        rng = np.random.default_rng(5)
        x = np.sort(rng.uniform(0.0, 1.0, 15))
        y = np.sin(4 * x)
        model = single_string_model(x, y, 1e-10)
        mean, cov = predict(model, x[:, None])
        np.testing.assert_allclose(mean, y, atol=1e-4)
        assert np.all(np.diag(cov) >= -1e-9)

    def test_uniform_single_string_matches_plain_gp_prediction(self):
        rng = np.random.default_rng(6)
        x = np.sort(rng.uniform(0.0, 1.0, 25))
        y = np.sin(5 * x) + 0.05 * rng.standard_normal(25)
        kernel = squared_exponential(1.0, 0.3)
        model = single_string_model(x, y, 0.01, kernel)
        xs = np.linspace(0.05, 0.95, 7)
        mean, cov = predict(model, xs[:, None])
        from stringgp.kernels import eval_value

        k_tt = eval_value(kernel, x[:, None], x[None, :]) + 0.01 * np.eye(25)
        k_st = eval_value(kernel, xs[:, None], x[None, :])
        k_ss = eval_value(kernel, xs[:, None], xs[None, :])
        mean_o = k_st @ np.linalg.solve(k_tt, y)
        cov_o = k_ss - k_st @ np.linalg.solve(k_tt, k_st.T)
        np.testing.assert_allclose(mean, mean_o, atol=1e-7)
        np.testing.assert_allclose(cov, cov_o, atol=1e-7)

    def test_posterior_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(8)
        x = np.sort(rng.uniform(0.0, 1.0, 20))
        y = rng.standard_normal(20)
        kernel = squared_exponential(1.3, 0.3)
        model = single_string_model(x, y, 0.05, kernel)
        xs = np.linspace(0.0, 1.0, 9)
        _, cov = predict(model, xs[:, None])
        assert np.all(np.diag(cov) <= kernel.params[0] + 1e-9)

    def test_extrapolation_outside_domain_raises(self):
        model = single_string_model(np.array([0.2, 0.8]), np.array([0.0, 1.0]), 0.1)
        with pytest.raises(ValueError, match="domain"):
            predict(model, np.array([[1.5]]))

    def test_heteroskedastic_groups_shape_predictive_spread(self):
        t, y, _ = motorcycle_synthetic(seed=3)
        from stringgp import StringPartition, StringSpec, matern32
        from stringgp.derivative_gp import ZERO_MEAN

        part = StringPartition(
            (0.0, 15.0, 32.0, 45.0, 60.0),
            tuple(StringSpec(matern32(float(np.var(y)), 8.0), ZERO_MEAN) for _ in range(4)),
        )
        noise = {(k,): float(np.var(y)) * 0.1 for k in range(1, 5)}
        model = make_model(t[:, None], y, [part], noise=noise)
        result = fit_mle(model, FitConfig(restarts=2, seed=0))
        # the fitted noise in the quiet first regime is far below the loud one
        assert result.model.noise[(1,)] < 0.25 * result.model.noise[(2,)]
        grid_quiet = np.linspace(2.0, 13.0, 12)[:, None]
        grid_loud = np.linspace(17.0, 30.0, 12)[:, None]
        _, cov_q = predict(result.model, grid_quiet)
        _, cov_l = predict(result.model, grid_loud)
        assert np.diag(cov_q).mean() < np.diag(cov_l).mean()


class TestValueCovMatrix:
    def test_additive_matrix_matches_elementwise_moments(self):
        from stringgp import MembraneModel, membrane_moments, symmetric_sum

        p1 = uniform_partition(squared_exponential(1.0, 0.4), [0.0, 0.5, 1.0])
        p2 = uniform_partition(squared_exponential(0.7, 0.3), [0.0, 1.0])
        model = MembraneModel((p1, p2))
        rng = np.random.default_rng(2)
        a = rng.uniform(0.0, 1.0, (6, 2))
        b = rng.uniform(0.0, 1.0, (4, 2))
        mat = value_cov_matrix(model.models, symmetric_sum(2), a, b)
        for i in range(6):
            for j in range(4):
                mom = membrane_moments(model, a[i], b[j])
                assert abs(mat[i, j] - mom.cov) < 1e-10
