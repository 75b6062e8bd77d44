import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhpo.errors import CapacityError, ConfigError
from fedhpo.space import (
    DistributionParams,
    HyperparamDim,
    HyperparamSpace,
    build_space,
    discrete_log_pmf,
    discrete_pmf,
    discrete_score,
    gaussian_log_prob,
    gaussian_score,
    grid_cardinality,
    initial_params,
    sample_continuous,
    sample_discrete,
)

from conftest import unit_space

LR = {"name": "lr", "min": 1e-4, "max": 1e-1, "log_scaled": True, "grid_points": 5}


def _params(mu, sigma):
    return DistributionParams(np.asarray(mu, float), np.log(np.asarray(sigma, float)))


class TestHyperparamSpace:
    def test_log_midpoint_maps_to_zero(self):
        space = build_space([LR])
        assert space.to_normalized({"lr": 10**-2.5})[0] == pytest.approx(0.0, abs=1e-12)
        assert space.to_raw([0.0])["lr"] == pytest.approx(3.162e-3, rel=1e-3)

    def test_dimension_count_with_client_weights(self):
        dims = [LR, {"name": "local_iters", "min": 1, "max": 50, "kind": "integer"},
                {"name": "aw", "kind": "simplex", "size": 8},
                {"name": "server_lr", "min": 0.5, "max": 1.5}]
        assert build_space(dims, n_clients=8).size == 11

    def test_degenerate_range_rejected(self):
        with pytest.raises(ConfigError, match="raw_min"):
            HyperparamDim("lr", 0.1, 0.1)

    def test_simplex_size_must_match_clients(self):
        with pytest.raises(ConfigError, match="client count"):
            build_space([{"name": "aw", "kind": "simplex", "size": 3}], n_clients=4)

    def test_unknown_key_names_the_entry(self):
        with pytest.raises(ConfigError, match=r"space\.dims\[0\]"):
            build_space([{"name": "lr", "min": 0, "max": 1, "colour": "red"}])

    @given(st.floats(1e-4, 1e-1), st.floats(0.5, 1.5))
    def test_round_trip_continuous(self, lr, slr):
        space = build_space([LR, {"name": "server_lr", "min": 0.5, "max": 1.5}])
        back = space.to_raw(space.to_normalized({"lr": lr, "server_lr": slr}))
        assert back["lr"] == pytest.approx(lr, rel=1e-12, abs=1e-12)
        assert back["server_lr"] == pytest.approx(slr, rel=1e-12, abs=1e-12)

    def test_equal_simplex_coords_give_uniform_weights(self):
        space = build_space([{"name": "aw", "kind": "simplex", "size": 4}])
        raw = space.to_raw(np.zeros(4))
        assert [raw[f"aw[{k}]"] for k in range(4)] == pytest.approx([0.25] * 4)

    def test_integer_rounds_to_nearest(self):
        space = build_space([{"name": "local_iters", "min": 1, "max": 11, "kind": "integer"}])
        z = space.dims[0].normalize(2.6)
        assert space.to_raw([z])["local_iters"] == 3

    @settings(max_examples=50)
    @given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
    def test_raw_values_respect_ranges(self, z):
        dims = [LR, {"name": "local_iters", "min": 1, "max": 50, "kind": "integer"},
                {"name": "aw", "kind": "simplex", "size": 3}, {"name": "server_lr", "min": 0.5, "max": 1.5}]
        space = build_space(dims, n_clients=3)
        raw = space.to_raw(z)
        assert 1e-4 <= raw["lr"] <= 1e-1
        assert isinstance(raw["local_iters"], int) and 1 <= raw["local_iters"] <= 50
        w = [raw[f"aw[{k}]"] for k in range(3)]
        assert min(w) >= 0 and sum(w) == pytest.approx(1.0, abs=1e-12)

    def test_normalized_axis_is_shared(self):
        space = HyperparamSpace((HyperparamDim("a", 0, 10, grid_points=3),
                                 HyperparamDim("b", 1, 2, grid_points=4)), scale=2.0)
        for i in range(space.size):
            assert space.grid(i)[0] == -2.0 and space.grid(i)[-1] == 2.0


class TestGridCardinality:
    @pytest.mark.parametrize("dims, points, expected", [(4, 5, 625), (11, 6, 362_797_056), (1, 2, 2)])
    def test_products(self, dims, points, expected):
        assert grid_cardinality(unit_space(*[points] * dims)) == expected

    def test_overflow_is_a_capacity_error(self):
        with pytest.raises(CapacityError):
            grid_cardinality(unit_space(*[10] * 20))

    def test_pmf_refuses_oversized_grid(self):
        space = unit_space(10, 10, 10)
        with pytest.raises(CapacityError, match="exceeds cap"):
            discrete_pmf(space, initial_params(space), max_cardinality=999)


class TestDiscreteSearch:
    def test_three_point_pmf(self):
        # oracle: exp(-x^2/2) at -1, 0, 1, normalized by hand
        e = math.exp(-0.5)
        expected = np.array([e, 1.0, e]) / (1.0 + 2 * e)
        pmf = discrete_pmf(unit_space(3), _params([0.0], [1.0]))
        np.testing.assert_allclose(pmf, expected, rtol=1e-12)
        np.testing.assert_allclose(pmf, [0.2741, 0.4519, 0.2741], atol=5e-5)

    def test_narrow_policy_concentrates(self):
        pmf = discrete_pmf(unit_space(5), _params([0.5], [1e-3]))
        assert pmf[3] >= 0.99

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(2, 6), min_size=1, max_size=4), st.integers(0, 2**31))
    def test_pmf_sums_to_one(self, points, seed):
        r = np.random.default_rng(seed)
        space = unit_space(*points)
        params = _params(r.uniform(-1.5, 1.5, len(points)), r.uniform(0.05, 2.0, len(points)))
        assert discrete_pmf(space, params).sum() == pytest.approx(1.0, abs=1e-9)

    def test_sample_lies_on_grid(self, rng):
        space = unit_space(4, 3)
        for _ in range(20):
            s = sample_discrete(space, initial_params(space), rng)
            for i, v in enumerate(s.normalized):
                assert v in space.grid(i)

    def test_score_matches_finite_differences_everywhere(self):
        space = unit_space(3, 4)
        params = _params([0.2, -0.4], [0.6, 0.9])
        logp = discrete_log_pmf(space, params)
        eps = 1e-6
        for index in np.ndindex(*logp.shape):
            s_mu, s_ls = discrete_score(space, params, index)
            v = params.as_vector()
            for j in range(v.size):
                hi, lo = v.copy(), v.copy()
                hi[j] += eps
                lo[j] -= eps
                fd = (discrete_log_pmf(space, DistributionParams.from_vector(hi))[index]
                      - discrete_log_pmf(space, DistributionParams.from_vector(lo))[index]) / (2 * eps)
                an = np.concatenate([s_mu, s_ls])[j]
                assert abs(an - fd) <= 1e-5 * max(abs(fd), 1e-3)

    def test_expected_score_is_zero(self):
        space = unit_space(5, 3, 4)
        params = _params([0.3, -0.8, 1.2], [0.4, 1.1, 0.25])
        pmf = discrete_pmf(space, params)
        total = np.zeros(6)
        for index in np.ndindex(*pmf.shape):
            total += pmf[index] * np.concatenate(discrete_score(space, params, index, pmf))
        np.testing.assert_allclose(total, 0.0, atol=1e-9)

    def test_deterministic_under_seed(self):
        space = unit_space(5, 5)
        params = _params([0.1, 0.2], [0.5, 0.7])
        a = sample_discrete(space, params, np.random.default_rng(3))
        b = sample_discrete(space, params, np.random.default_rng(3))
        assert a.grid_index == b.grid_index
        np.testing.assert_array_equal(a.score_mu, b.score_mu)


class TestContinuousSearch:
    def test_score_at_mean(self):
        mu, ls = gaussian_score([0.3, -0.1], [0.3, -0.1], np.log([0.5, 2.0]))
        np.testing.assert_array_equal(mu, [0.0, 0.0])
        np.testing.assert_array_equal(ls, [-1.0, -1.0])

    def test_score_example(self):
        mu, ls = gaussian_score([2.0], [0.0], [0.0])
        assert (mu[0], ls[0]) == (2.0, 3.0)

    @settings(max_examples=50)
    @given(st.floats(-2, 2), st.floats(-1, 1), st.floats(-3, 1))
    def test_score_matches_finite_differences(self, h, mu, log_sigma):
        eps = 1e-6
        s_mu, s_ls = gaussian_score([h], [mu], [log_sigma])
        fd_mu = (gaussian_log_prob(h, mu + eps, log_sigma) - gaussian_log_prob(h, mu - eps, log_sigma)) / (2 * eps)
        fd_ls = (gaussian_log_prob(h, mu, log_sigma + eps) - gaussian_log_prob(h, mu, log_sigma - eps)) / (2 * eps)
        assert abs(s_mu[0] - fd_mu) <= 1e-6 * max(1.0, abs(fd_mu))
        assert abs(s_ls[0] - fd_ls) <= 1e-6 * max(1.0, abs(fd_ls))

    def test_monte_carlo_mean_score_is_zero(self):
        space = unit_space(None)
        params = _params([0.1], [0.3])
        r = np.random.default_rng(7)
        scores = [sample_continuous(space, params, r).score_mu[0] for _ in range(100_000)]
        assert abs(np.mean(scores)) < 0.02

    def test_score_uses_unclipped_draw(self, rng):
        space = unit_space(None)
        params = _params([0.95], [0.5])
        for _ in range(50):
            s = sample_continuous(space, params, rng)
            assert -1.0 <= s.normalized[0] <= 1.0
            np.testing.assert_allclose(s.score_mu, (s.unclipped - 0.95) / 0.25)

    def test_deterministic_under_seed(self):
        space = unit_space(None, None)
        params = _params([0.0, 0.5], [0.2, 0.3])
        a = sample_continuous(space, params, np.random.default_rng(11))
        b = sample_continuous(space, params, np.random.default_rng(11))
        np.testing.assert_array_equal(a.unclipped, b.unclipped)
        assert a.raw == b.raw

    def test_non_finite_params_rejected(self, rng):
        with pytest.raises(ValueError, match="finite"):
            sample_continuous(unit_space(None), _params([np.nan], [1.0]), rng)

    @pytest.mark.slow
    def test_cost_is_grid_independent(self, rng):
        def median_time(fn, space, n):
            params = initial_params(space)
            ts = []
            for _ in range(n):
                t0 = time.perf_counter()
                fn(space, params, rng)
                ts.append(time.perf_counter() - t0)
            return float(np.median(ts))

        small, large = unit_space(4, 4, 4), unit_space(40, 40, 40)
        cs = [median_time(sample_continuous, s, 201) for s in (small, large)]
        ds = [median_time(sample_discrete, s, 21) for s in (small, large)]
        assert max(cs) / min(cs) <= 2.0
        assert ds[1] > ds[0]
