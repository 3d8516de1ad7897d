import math

import numpy as np
import pytest

from stringgp import squared_exponential
from stringgp.likelihoods import FlatLikelihood, GaussianLikelihood
from stringgp.mcmc import (
    SPLIT_ANGLE,
    McmcConfig,
    NonFiniteLikelihoodError,
    RJSampler,
    boundary_membership,
    compute_factors,
    default_changepoint_prior,
    kernel_membership,
    prior_changepoint_moments,
    run_sampler,
    unwhiten,
    whiten,
)
from stringgp.string_core import StringModel, uniform_partition


def make_sampler(n_points=30, likelihood=None, seed=0, **config_kw):
    x = np.linspace(0.0, 1.0, n_points)[:, None]
    config = McmcConfig(seed=seed, **config_kw)
    sampler = RJSampler(x, None, likelihood or FlatLikelihood(), config)
    sampler.initialise(np.random.default_rng(seed))
    return sampler


class TestKernelMembership:
    def test_no_changepoints_all_first_config(self):
        bt = [0.0, 1.0, 2.0, 3.0]
        np.testing.assert_array_equal(kernel_membership(bt, []), [0, 0, 0])

    def test_interior_changepoint_splits_strings(self):
        bt = [0.0, 1.0, 2.0, 3.0]
        # the string containing the change-point adopts the new config
        np.testing.assert_array_equal(kernel_membership(bt, [1.5]), [0, 1, 1])

    def test_changepoint_on_boundary_keeps_left_string(self):
        bt = [0.0, 1.0, 2.0, 3.0]
        np.testing.assert_array_equal(kernel_membership(bt, [1.0]), [0, 1, 1])

    def test_boundary_membership_prefixes_first_string(self):
        bt = [0.0, 1.0, 2.0]
        np.testing.assert_array_equal(boundary_membership(bt, [0.5]), [1, 1, 1])
        np.testing.assert_array_equal(boundary_membership(bt, [1.5]), [0, 0, 1])


class TestWhitening:
    def test_round_trip_on_nondegenerate_model(self):
        rng = np.random.default_rng(0)
        bt = np.linspace(0.0, 1.0, 40) + 0.002 * rng.standard_normal(40)
        bt = np.sort(bt)
        member = boundary_membership(bt, [0.4, 0.7])
        log_theta = rng.normal(0.0, 0.4, (3, 2))
        m, l = compute_factors(bt, member, log_theta, "se")
        z = rng.normal(0.0, 1.0, (40, 2))
        z_back = unwhiten(m, l, whiten(m, l, z))
        assert np.abs(z_back - z).max() <= 1e-8

    def test_factor_square_roots_match_sigma(self):
        rng = np.random.default_rng(1)
        bt = np.sort(rng.uniform(0.0, 1.0, 12))
        member = boundary_membership(bt, [])
        m, l = compute_factors(bt, member, np.log([[1.0, 0.3]]), "se")
        model = StringModel(uniform_partition(squared_exponential(1.0, 0.3), bt), validate=False)
        mom = model.boundary_moments
        for k in range(12):
            np.testing.assert_allclose(l[k] @ l[k].T, mom.sigma[k], atol=1e-10)
            if k:
                np.testing.assert_allclose(m[k], mom.m[k], atol=1e-10)

    def test_degenerate_period_factors_complete(self):
        # boundary spacing exactly one period: deterministic propagation
        bt = np.array([0.0, 0.7, 1.4])
        member = boundary_membership(bt, [])
        m, l = compute_factors(bt, member, np.log([[1.0, 1.0, 0.7]]), "periodic")
        assert np.abs(l[1]).max() <= 1e-8  # rank-zero conditional covariance
        rng = np.random.default_rng(2)
        z = unwhiten(m, l, rng.standard_normal((3, 2)))
        assert np.all(np.isfinite(z))
        x = whiten(m, l, z)  # pseudo-inverse path, must not fail
        assert np.all(np.isfinite(x))
        z_again = unwhiten(m, l, x)
        np.testing.assert_allclose(z_again, z, atol=1e-8)

    def test_unwhiten_zero_input_zero_output(self):
        bt = np.linspace(0.0, 1.0, 10)
        m, l = compute_factors(bt, boundary_membership(bt, []), np.log([[1.0, 0.5]]), "se")
        z = unwhiten(m, l, np.zeros((10, 2)))
        np.testing.assert_array_equal(z, 0.0)


class TestLambdaUpdate:
    def test_posterior_params_match_stated_form(self):
        sampler = make_sampler(alpha=1.0, beta=1.0)
        slot = sampler.slots[0]
        slot.cps = np.empty(0)
        shape, rate = sampler.lambda_posterior_params(slot)
        assert shape == pytest.approx(1.0)  # n = 0, unit domain
        assert rate == pytest.approx(2.0)
        draws = [np.random.default_rng(s).gamma(shape, 1.0 / rate) for s in range(4000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.02)

    def test_prior_count_moment_formulas(self):
        # direct simulation of the Gamma-mixed Poisson against the formulas
        alpha, beta, length = 5.0, 1.0, 1.0
        mean, var = prior_changepoint_moments(alpha, beta, length)
        assert mean == pytest.approx(5.0)
        assert var == pytest.approx(10.0)
        rng = np.random.default_rng(0)
        lam = rng.gamma(alpha, 1.0 / beta, 400_000)
        counts = rng.poisson(lam * length)
        assert counts.mean() == pytest.approx(mean, rel=0.01)
        assert counts.var() == pytest.approx(var, rel=0.02)

    def test_default_prior_follows_five_percent_rule(self):
        alpha, beta = default_changepoint_prior(200, 1.0)
        mean, var = prior_changepoint_moments(alpha, beta, 1.0)
        assert mean == pytest.approx(0.05 * 200)
        assert var == pytest.approx(50.0 * mean)


class TestUUpdate:
    def test_no_parameters_is_a_noop(self):
        sampler = make_sampler()
        before = sampler.u
        sampler.step_u(np.random.default_rng(0))
        assert sampler.u is before is None

    def test_conjugate_and_mh_updates_agree_in_distribution(self):
        rng = np.random.default_rng(0)
        f = np.zeros(25)
        y = 0.7 * rng.standard_normal(25)
        conj = GaussianLikelihood(y, prior=(3.0, 1.0))
        mh = GaussianLikelihood(y, prior=(3.0, 1.0), use_mh=True, mh_step=0.4)
        draws_c = []
        u = conj.init_u(rng)
        for _ in range(4000):
            u = conj.update_u(f, u, rng)
            draws_c.append(u)
        draws_m = []
        u = mh.init_u(rng)
        for _ in range(40000):
            u = mh.update_u(f, u, rng)
            draws_m.append(u)
        draws_c = np.array(draws_c)
        draws_m = np.array(draws_m[5000:])
        assert np.mean(draws_m) == pytest.approx(np.mean(draws_c), rel=0.1)
        assert np.var(draws_m) == pytest.approx(np.var(draws_c), rel=0.3)

    def test_symmetric_proposal_equal_density_always_accepts(self):
        # equal likelihood and prior at u and u': the MH ratio is one
        y = np.zeros(4)
        lik = GaussianLikelihood(y, prior=(2.0, 0.5))
        log_r = (
            lik.log_lik(np.zeros(4), 0.3)
            + lik._log_prior_u(0.3)
            - lik.log_lik(np.zeros(4), 0.3)
            - lik._log_prior_u(0.3)
        )
        assert math.exp(min(0.0, log_r)) == 1.0


class TestEssUpdates:
    def test_identity_angle_preserves_state(self):
        x = np.array([0.3, -1.2, 0.5])
        nu = np.array([1.0, 1.0, 1.0])
        candidate = x * math.cos(0.0) + nu * math.sin(0.0)
        np.testing.assert_array_equal(candidate, x)

    def test_x_prior_recovery_under_flat_likelihood(self):
        config = dict(iterations=4000, burnin=0, thin=1, record_x=True, alpha=2.0, beta=2.0)
        x_train = np.linspace(0.0, 1.0, 12)[:, None]
        chain = run_sampler(x_train, FlatLikelihood(), McmcConfig(seed=4, **config))
        flat = chain.x_trace.ravel()
        assert abs(flat.mean()) <= 0.03
        assert abs(flat.var() - 1.0) <= 0.05

    def test_theta_prior_recovery_under_flat_likelihood(self):
        rho = 0.7
        sampler = make_sampler(
            n_points=10, iterations=1, allow_add=False, rho=rho, kernel_family="se"
        )
        rng = np.random.default_rng(9)
        draws = []
        for _ in range(4000):
            sampler.step_theta(rng)
            draws.append(sampler.slots[0].log_theta.ravel().copy())
        draws = np.array(draws)
        assert abs(draws.mean()) <= 0.05
        assert abs(draws.var() - rho) <= 0.07

    def test_zero_prior_variance_pins_theta_at_one(self):
        sampler = make_sampler(n_points=8, rho=1e-20)
        rng = np.random.default_rng(0)
        for _ in range(5):
            sampler.step_theta(rng)
        np.testing.assert_allclose(np.exp(sampler.slots[0].log_theta), 1.0, atol=1e-8)

    def test_theta_posterior_concentrates_near_truth(self):
        # well-identified lengthscale: posterior mode within 25% of truth
        rng = np.random.default_rng(3)
        x = np.linspace(0.0, 1.0, 60)
        true_ell = 0.25
        model = StringModel(uniform_partition(squared_exponential(1.0, true_ell), x))
        f = model.sample_paths(None, np.random.default_rng(8)).values[:, 0]
        y = f + 0.05 * rng.standard_normal(60)
        config = McmcConfig(
            iterations=3000, burnin=1500, thin=1, seed=1, allow_add=False, rho=1.0
        )
        sampler = RJSampler(x[:, None], None, GaussianLikelihood(y, noise_variance=0.0025), config)
        chain = sampler.run()
        # reuse the final state's hyper-parameters across the kept window
        ell_draws = []
        sampler2 = RJSampler(
            x[:, None], None, GaussianLikelihood(y, noise_variance=0.0025), config
        )
        sampler2.initialise(np.random.default_rng(1))
        rng2 = np.random.default_rng(2)
        for it in range(3000):
            sampler2.step_theta(rng2)
            sampler2.step_x(rng2)
            if it >= 1500:
                ell_draws.append(math.exp(sampler2.slots[0].log_theta[0, 1]))
        post_mode = np.median(ell_draws)
        assert abs(post_mode - true_ell) <= 0.25 * true_ell


class TestChangepointMoves:
    def test_non_crossing_move_always_accepted(self):
        sampler = make_sampler(n_points=20, likelihood=FlatLikelihood())
        slot = sampler.slots[0]
        bt = slot.bt
        # place a change-point strictly between two adjacent boundary times
        slot.cps = np.array([0.5 * (bt[3] + bt[4])])
        slot.log_theta = np.vstack([slot.log_theta[0], slot.log_theta[0] + 0.3])
        slot.member = boundary_membership(bt, slot.cps)
        from stringgp.mcmc import compute_factors

        slot.m, slot.l = compute_factors(bt, slot.member, slot.log_theta, "se")
        slot.z = unwhiten(slot.m, slot.l, slot.x)
        sampler.log_lik = sampler._loglik(sampler._f_train())
        before = sampler.telemetry["accept_cp_move"]
        sampler.step_changepoints(np.random.default_rng(0))
        assert sampler.telemetry["accept_cp_move"] == before + 1

    def test_flat_likelihood_positions_mix_to_uniform(self):
        sampler = make_sampler(n_points=15)
        slot = sampler.slots[0]
        slot.cps = np.array([0.5])
        slot.log_theta = np.vstack([slot.log_theta[0], slot.log_theta[0]])
        slot.member = boundary_membership(slot.bt, slot.cps)
        rng = np.random.default_rng(1)
        positions = []
        for _ in range(4000):
            sampler.step_changepoints(rng)
            positions.append(slot.cps[0])
        positions = np.array(positions)
        # a single change-point with domain-end neighbours sweeps (lo, hi)
        assert positions.min() < 0.05 and positions.max() > 0.95
        assert abs(positions.mean() - 0.5) < 0.05
        assert abs(positions.var() - 1.0 / 12.0) < 0.02

    def test_factor_locality_bitwise(self):
        sampler = make_sampler(n_points=25)
        slot = sampler.slots[0]
        slot.cps = np.array([0.52])
        slot.log_theta = np.vstack([slot.log_theta[0], slot.log_theta[0] + 0.25])
        slot.member = boundary_membership(slot.bt, slot.cps)
        from stringgp.mcmc import compute_factors

        slot.m, slot.l = compute_factors(slot.bt, slot.member, slot.log_theta, "se")
        slot.z = unwhiten(slot.m, slot.l, slot.x)
        m_before, l_before = slot.m.copy(), slot.l.copy()
        z_before = slot.z.copy()
        member, m_new, l_new, z_new, start = sampler._apply_cp_config(
            slot, np.array([0.68]), slot.log_theta
        )
        changed = np.flatnonzero(member != slot.member)
        untouched = np.setdiff1d(np.arange(slot.bt.size), changed)
        assert np.array_equal(m_new[untouched], m_before[untouched])
        assert np.array_equal(l_new[untouched], l_before[untouched])
        assert np.array_equal(z_new[: changed.min()], z_before[: changed.min()])


class TestBetweenModels:
    def test_split_rotation_jacobian_is_unit(self):
        c, s = math.cos(SPLIT_ANGLE), math.sin(SPLIT_ANGLE)
        rotation = np.array([[c, -s], [s, c]])
        assert abs(abs(np.linalg.det(rotation)) - 1.0) < 1e-15
        inverse = np.array([[c, s], [-s, c]])
        np.testing.assert_allclose(rotation @ inverse, np.eye(2), atol=1e-15)

    def test_split_of_identical_thetas(self):
        theta_p = np.array([0.4, -0.2])
        c, s = math.cos(SPLIT_ANGLE), math.sin(SPLIT_ANGLE)
        left = c * theta_p - s * theta_p
        right = s * theta_p + c * theta_p
        np.testing.assert_allclose(np.exp(left), 1.0, atol=1e-15)
        np.testing.assert_allclose(right, math.sqrt(2.0) * theta_p, atol=1e-15)

    def test_delete_after_add_recovers_theta(self):
        rng = np.random.default_rng(0)
        theta_p = rng.normal(0.0, 1.0, 3)
        theta_star = rng.normal(0.0, 1.0, 3)
        c, s = math.cos(SPLIT_ANGLE), math.sin(SPLIT_ANGLE)
        left = c * theta_p - s * theta_star
        right = s * theta_p + c * theta_star
        merged = c * left + s * right
        discarded = -s * left + c * right
        np.testing.assert_allclose(merged, theta_p, atol=1e-12)
        np.testing.assert_allclose(discarded, theta_star, atol=1e-12)

    def test_flat_likelihood_count_distribution_matches_prior(self):
        # stationary ratios p(n+1)/p(n) of the Gamma-mixed Poisson prior
        alpha, beta = 25.0, 5.0
        chain = run_sampler(
            np.linspace(0.0, 1.0, 25)[:, None],
            FlatLikelihood(),
            McmcConfig(
                iterations=15000, burnin=1000, thin=1, seed=2, alpha=alpha, beta=beta
            ),
        )
        counts = np.bincount(chain.n_trace[1000:, 0], minlength=10)
        for n in (3, 4, 5):
            if counts[n] < 200 or counts[n + 1] < 200:
                continue
            empirical = counts[n + 1] / counts[n]
            prior_ratio = (alpha + n) / (n + 1) * (1.0 / (beta + 1.0))
            assert empirical == pytest.approx(prior_ratio, rel=0.2)

    def test_add_then_delete_leaves_state_invariant_under_forced_moves(self):
        sampler = make_sampler(n_points=16, alpha=2.0, beta=2.0)
        slot = sampler.slots[0]
        theta_before = slot.log_theta.copy()
        rng = np.random.default_rng(5)
        accepted = sampler.propose_add(0, rng)
        if accepted and slot.n_cp == 1:
            # force the delete of the only change-point with the inverse rotation
            c, s = math.cos(SPLIT_ANGLE), math.sin(SPLIT_ANGLE)
            merged = c * slot.log_theta[0] + s * slot.log_theta[1]
            np.testing.assert_allclose(merged, theta_before[0], atol=1e-12)


class TestRunSampler:
    def test_burnin_equal_to_iterations_gives_empty_chain(self):
        chain = run_sampler(
            np.linspace(0, 1, 8)[:, None],
            FlatLikelihood(),
            McmcConfig(iterations=20, burnin=20, seed=0),
        )
        assert chain.f.shape[0] == 0

    def test_deterministic_given_seed(self):
        kw = dict(iterations=60, burnin=30, seed=7)
        x = np.linspace(0, 1, 10)[:, None]
        y = np.sin(3 * x[:, 0])
        c1 = run_sampler(x, GaussianLikelihood(y, noise_variance=0.1), McmcConfig(**kw))
        c2 = run_sampler(x, GaussianLikelihood(y, noise_variance=0.1), McmcConfig(**kw))
        np.testing.assert_array_equal(c1.f, c2.f)

    def test_posterior_matches_dense_gp_oracle(self):
        all_t = np.linspace(0.0, 1.0, 40)
        test_idx = np.arange(3, 40, 8)
        train_idx = np.setdiff1d(np.arange(40), test_idx)
        kernel = squared_exponential(1.0, 0.3)
        sm = StringModel(uniform_partition(kernel, all_t))
        f_true = sm.sample_paths(None, np.random.default_rng(11)).values[train_idx, 0]
        rng = np.random.default_rng(5)
        sigma2 = 0.05
        y = f_true + math.sqrt(sigma2) * rng.standard_normal(train_idx.size)
        config = McmcConfig(
            iterations=12000,
            burnin=3000,
            thin=3,
            seed=3,
            allow_add=False,
            update_theta=False,
            init_log_theta=np.log([1.0, 0.3]),
        )
        chain = run_sampler(
            all_t[train_idx][:, None],
            GaussianLikelihood(y, noise_variance=sigma2),
            config,
            x_test=all_t[test_idx][:, None],
        )
        c = sm.boundary_cov[:, :, 0, 0]
        k_tt = c[np.ix_(train_idx, train_idx)] + sigma2 * np.eye(train_idx.size)
        k_st = c[np.ix_(test_idx, train_idx)]
        mean_o = k_st @ np.linalg.solve(k_tt, y)
        draws = chain.f_star
        nb = 20
        b = draws[: draws.shape[0] // nb * nb].reshape(nb, -1, draws.shape[1]).mean(axis=1)
        se = b.std(axis=0, ddof=1) / math.sqrt(nb)
        assert np.all(np.abs(draws.mean(0) - mean_o) <= 3.0 * se)

    def test_gradients_recorded_via_link_partials(self):
        x = np.linspace(0, 1, 9)[:, None]
        y = np.sin(3 * x[:, 0])
        chain = run_sampler(
            x,
            GaussianLikelihood(y, noise_variance=0.1),
            McmcConfig(iterations=40, burnin=20, seed=0),
        )
        assert chain.grad_f.shape == (chain.f.shape[0], 9, 1)
        assert np.all(np.isfinite(chain.grad_f))

    def test_multi_output_costs_match_stacked_dimensions(self):
        x = np.linspace(0, 1, 20)[:, None]
        y = np.sin(3 * x[:, 0])

        class TwoOutputLik(FlatLikelihood):
            pass

        cfg = dict(iterations=30, burnin=30, seed=0, allow_add=False)
        single = RJSampler(
            np.column_stack([x[:, 0], x[:, 0] + 1.0]),
            None,
            FlatLikelihood(),
            McmcConfig(n_outputs=1, **cfg),
        )
        single_chain = single.run()
        double = RJSampler(x, None, TwoOutputLik(), McmcConfig(n_outputs=2, **cfg))
        double_chain = double.run()
        ops_single = single_chain.telemetry["z_updates"]
        ops_double = double_chain.telemetry["z_updates"]
        assert ops_double == pytest.approx(ops_single, rel=0.05)

    def test_per_iteration_work_scales_linearly(self):
        ops = {}
        for n in (1000, 10000):
            x = np.linspace(0.0, 1.0, n)[:, None]
            y = np.sin(3 * x[:, 0])
            chain = run_sampler(
                x,
                GaussianLikelihood(y, noise_variance=0.1),
                McmcConfig(iterations=3, burnin=3, seed=0),
            )
            ops[n] = (chain.telemetry["factor_builds"] + chain.telemetry["z_updates"]) / 3
        assert ops[10000] <= 12.0 * ops[1000]

    def test_nan_likelihood_aborts_with_dump(self):
        x = np.linspace(0, 1, 6)[:, None]
        y = np.array([0.0, 1.0, np.nan, 0.0, 1.0, 0.0])
        with pytest.raises(NonFiniteLikelihoodError) as err:
            run_sampler(
                x, GaussianLikelihood(y, noise_variance=0.1), McmcConfig(iterations=5, burnin=0)
            )
        assert "iteration" in err.value.dump
