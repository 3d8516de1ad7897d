from itertools import combinations

import numpy as np
import pytest

from stringgp import (
    MembraneModel,
    StringPartition,
    StringSpec,
    elementary_symmetric,
    flexibility_metrics,
    link_eval_and_partials,
    membrane_gradient,
    membrane_moments,
    periodic,
    product_link,
    rq_profile,
    se_profile,
    squared_exponential,
    symmetric_sum,
    uniform_partition,
    weighted_additive,
)
from stringgp.membrane import elementary_symmetric_values
from stringgp.string_core import StringModel


def esp_brute(x, n):
    if n == 0:
        return 1.0
    return sum(np.prod(np.asarray(x)[list(c)]) for c in combinations(range(len(x)), n))


class TestLinkFunctions:
    def test_symmetric_sum_value_and_gradient(self):
        value, grad = link_eval_and_partials(symmetric_sum(3), [1.0, 2.0, 3.0])
        assert value == 6.0
        np.testing.assert_array_equal(grad, [1.0, 1.0, 1.0])

    def test_product_link_value_and_gradient(self):
        value, grad = link_eval_and_partials(product_link(3), [2.0, 3.0, 4.0])
        assert value == 24.0
        np.testing.assert_allclose(grad, [12.0, 8.0, 6.0])

    def test_pairwise_link_at_ones(self):
        value, grad = link_eval_and_partials(elementary_symmetric(3, 2), [1.0, 1.0, 1.0])
        assert value == 3.0
        np.testing.assert_allclose(grad, [2.0, 2.0, 2.0])

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
    def test_esp_matches_brute_force_enumeration(self, n):
        rng = np.random.default_rng(n)
        x = rng.uniform(-2.0, 2.0, 8)
        link = elementary_symmetric(8, n)
        value, grad = link_eval_and_partials(link, x)
        assert abs(value - esp_brute(x, n)) <= 1e-10 * max(1.0, abs(value))
        for j in range(8):
            expected = esp_brute(np.delete(x, j), n - 1)
            assert abs(grad[j] - expected) <= 1e-9 * max(1.0, abs(expected))

    def test_esp_values_vectorized(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (5, 4))
        e = elementary_symmetric_values(x, 4)
        for i in range(5):
            for n in range(5):
                assert abs(e[i, n] - esp_brute(x[i], n)) < 1e-12

    def test_weighted_additive_combines_orders(self):
        link = weighted_additive([2.0, 0.5, 1.0])
        x = np.array([1.0, -1.0, 2.0])
        value, grad = link_eval_and_partials(link, x)
        expected = 2.0 * esp_brute(x, 1) + 0.5 * esp_brute(x, 2) + 1.0 * esp_brute(x, 3)
        assert abs(value - expected) < 1e-12
        fd = np.empty(3)
        h = 1e-6
        for j in range(3):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd[j] = (link_eval_and_partials(link, xp)[0] - link_eval_and_partials(link, xm)[0]) / (2 * h)
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)

    def test_order_bounds_validated(self):
        with pytest.raises(ValueError):
            elementary_symmetric(3, 4)


class TestMembraneGradient:
    def test_symmetric_sum_gradient_is_raw_derivatives(self):
        grad = membrane_gradient(symmetric_sum(3), [0.5, -0.2, 1.0], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(grad, [1.0, 2.0, 3.0])

    def test_zero_derivatives_give_zero_gradient(self):
        grad = membrane_gradient(elementary_symmetric(3, 2), [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(grad, 0.0)

    def test_matches_chain_rule_finite_differences(self):
        # differentiate phi along smooth parametrised coordinate paths
        link = elementary_symmetric(3, 2)
        paths = [
            (lambda t: np.sin(t), lambda t: np.cos(t)),
            (lambda t: t**2, lambda t: 2 * t),
            (lambda t: np.exp(0.3 * t), lambda t: 0.3 * np.exp(0.3 * t)),
        ]
        rng = np.random.default_rng(4)
        h = 1e-6
        for _ in range(20):
            t = rng.uniform(0.2, 1.5, 3)
            vals = np.array([p[0](ti) for p, ti in zip(paths, t)])
            ders = np.array([p[1](ti) for p, ti in zip(paths, t)])
            grad = membrane_gradient(link, vals, ders)
            for j in range(3):
                tp, tm = t.copy(), t.copy()
                tp[j] += h
                tm[j] -= h
                fp = link_eval_and_partials(link, [p[0](ti) for p, ti in zip(paths, tp)])[0]
                fm = link_eval_and_partials(link, [p[0](ti) for p, ti in zip(paths, tm)])[0]
                fd = (fp - fm) / (2 * h)
                assert abs(grad[j] - fd) <= 1e-4 * max(abs(fd), 1e-3)


def two_dim_model(link=None):
    p1 = uniform_partition(squared_exponential(1.0, 0.4), [0.0, 0.5, 1.0])
    p2 = uniform_partition(squared_exponential(0.7, 0.3), [0.0, 1.0])
    return MembraneModel((p1, p2), link)


class TestMembraneMoments:
    def test_additive_cov_is_sum_of_univariate_covs(self):
        model = two_dim_model(symmetric_sum(2))
        u, v = np.array([0.2, 0.6]), np.array([0.8, 0.1])
        mom = membrane_moments(model, u, v)
        expected = sum(
            m.global_cov(ui, vi)[0, 0] for m, ui, vi in zip(model.models, u, v)
        )
        assert abs(mom.cov - expected) < 1e-12

    def test_zero_unconditional_means_propagate(self):
        for link in (symmetric_sum(2), product_link(2), elementary_symmetric(2, 2)):
            mom = membrane_moments(two_dim_model(link), [0.2, 0.3], [0.7, 0.9])
            assert mom.mean_u == 0.0 and mom.mean_v == 0.0
            np.testing.assert_array_equal(mom.grad_mean_u, 0.0)

    def test_product_link_cov_is_separable_within_string_cells(self):
        model = two_dim_model(product_link(2))
        u, v = np.array([0.1, 0.4]), np.array([0.3, 0.8])
        mom = membrane_moments(model, u, v)
        k1 = model.models[0].global_cov(u[0], v[0])[0, 0]
        k2 = model.models[1].global_cov(u[1], v[1])[0, 0]
        assert abs(mom.cov - k1 * k2) < 1e-12

    def test_additive_gram_is_psd_and_matches_univariate_sum(self):
        model = two_dim_model(symmetric_sum(2))
        rng = np.random.default_rng(1)
        pts = rng.uniform(0.0, 1.0, (12, 2))
        gram = np.empty((12, 12))
        for i in range(12):
            for j in range(12):
                gram[i, j] = membrane_moments(model, pts[i], pts[j]).cov
        direct = np.zeros((12, 12))
        for d, m in enumerate(model.models):
            direct += m.cov_grid(pts[:, d], pts[:, d])[..., 0, 0]
        np.testing.assert_allclose(gram, direct, atol=1e-10)
        assert np.linalg.eigvalsh(gram).min() >= -1e-8

    @pytest.mark.parametrize("link_name", ["sum", "product", "pairwise"])
    def test_cross_blocks_match_value_cov_finite_differences(self, link_name):
        link = {
            "sum": symmetric_sum(2),
            "product": product_link(2),
            "pairwise": elementary_symmetric(2, 2),
        }[link_name]
        model = two_dim_model(link)
        rng = np.random.default_rng(3)
        h = 1e-5
        for _ in range(10):
            u = rng.uniform(0.05, 0.95, 2)
            v = rng.uniform(0.05, 0.95, 2)
            mom = membrane_moments(model, u, v)
            for i in range(2):
                up, um = u.copy(), u.copy()
                up[i] += h
                um[i] -= h
                fd = (
                    membrane_moments(model, up, v).cov - membrane_moments(model, um, v).cov
                ) / (2 * h)
                assert abs(mom.cross[i] - fd) <= 1e-4 * max(abs(fd), 1e-3)

    def test_grad_grad_diagonal_matches_mixed_finite_differences(self):
        model = two_dim_model(elementary_symmetric(2, 2))
        u = np.array([0.2, 0.6])
        v = np.array([0.7, 0.3])
        h = 1e-4
        mom = membrane_moments(model, u, v)
        for i in range(2):
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            vp, vm = v.copy(), v.copy()
            vp[i] += h
            vm[i] -= h
            fd = (
                membrane_moments(model, up, vp).cov
                - membrane_moments(model, up, vm).cov
                - membrane_moments(model, um, vp).cov
                + membrane_moments(model, um, vm).cov
            ) / (4 * h * h)
            assert abs(mom.grad_grad[i, i] - fd) <= 1e-3 * max(abs(fd), 1e-2)


class TestFlexibility:
    def test_entropies_agree_and_information_ordered(self):
        rng = np.random.default_rng(17)
        profile = se_profile(0.5)
        for _ in range(1000):
            d = int(rng.integers(2, 6))
            x = rng.uniform(0.0, 1.0, d)
            y = rng.uniform(0.0, 1.0, d)
            if np.allclose(x, y):
                continue
            fm = flexibility_metrics(profile, x, y)
            assert abs(fm.h_f - fm.h_g) <= 1e-10
            assert fm.i_f <= fm.i_g + 1e-10

    def test_rq_profile_admissible(self):
        rng = np.random.default_rng(23)
        profile = rq_profile(alpha=2.0, lengthscale=0.7)
        for _ in range(100):
            x = rng.uniform(0.0, 1.0, 3)
            y = rng.uniform(0.0, 1.0, 3)
            if np.allclose(x, y):
                continue
            fm = flexibility_metrics(profile, x, y)
            assert fm.i_f <= fm.i_g + 1e-10

    def test_single_coordinate_displacement_equalises_information(self):
        profile = se_profile(0.5)
        x = np.array([0.3, 0.4, 0.5])
        y = x.copy()
        y[1] += 0.25
        fm = flexibility_metrics(profile, x, y)
        assert abs(fm.i_f - fm.i_g) <= 1e-12

    def test_coincident_points_rejected(self):
        with pytest.raises(ValueError):
            flexibility_metrics(se_profile(0.5), [0.1, 0.2], [0.1, 0.2])

    def test_mutual_information_nonnegative(self):
        fm = flexibility_metrics(se_profile(0.5), [0.1, 0.2], [0.15, 0.3])
        assert fm.i_f >= -1e-12 and fm.i_g >= -1e-12
