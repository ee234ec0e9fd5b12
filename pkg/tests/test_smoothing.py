import numpy as np
import pytest

from cwfilter.dual import PrunePolicy, TransitionRunner
from cwfilter.filtering import Mixture, run_filter
from cwfilter.smoothing import (
    CostToGoEntry,
    backward_step,
    combine,
    init_cost_to_go,
    run_smoother,
    smoothing_from_json,
    smoothing_to_json,
)

from oracles import obs_marginal_neutral
from test_filtering import make_obs

ZERO = (0, 0, 0, 0)


class TestInitCostToGo:
    def test_zero_gap_is_point_mass(self, illustration_cache):
        runner = TransitionRunner(illustration_cache, 200, root_seed=21)
        entry = init_cost_to_go(runner, (2, 1, 1, 2), 0.0)
        assert entry.values == {(2, 1, 1, 2): 1.0}
        assert entry.log_scale == 0.0

    def test_support_is_transition_support(self, illustration_cache):
        runner = TransitionRunner(illustration_cache, 1000, root_seed=22)
        entry = init_cost_to_go(runner, (2, 1, 1, 2), 0.1)
        et = runner.transition((2, 1, 1, 2), 0.1)
        assert entry.values == et.mass

    def test_neutral_support_never_exceeds_data_order(self, neutral_cache):
        runner = TransitionRunner(neutral_cache, 2000, root_seed=23)
        entry = init_cost_to_go(runner, (2, 1, 1, 2), 0.3)
        assert all(sum(m) <= 6 for m in entry.values)


class TestBackwardStep:
    def test_single_entry_zero_gap(self, illustration_cache):
        runner = TransitionRunner(illustration_cache, 200, root_seed=24)
        omega = CostToGoEntry(values={(1, 0, 1, 0): 1.0})
        y, sizes = (1, 1, 0, 2), [2, 2]
        out = backward_step(runner, omega, y, sizes, 0.0, None)
        assert out.values == {(2, 1, 1, 2): 1.0}
        lik = illustration_cache.obs_marginal((1, 0, 1, 0), y, sizes)
        assert out.log_scale == pytest.approx(np.log(lik))

    def test_neutral_reweighting_matches_oracle(self, neutral_cache):
        shape = neutral_cache.params.shape
        alpha = neutral_cache.params.alpha
        runner = TransitionRunner(neutral_cache, 200, root_seed=25)
        omega = CostToGoEntry(values={(1, 0, 0, 1): 0.25, (0, 1, 1, 0): 0.75})
        y, sizes = (1, 1, 1, 1), [2, 2]
        out = backward_step(runner, omega, y, sizes, 0.0, None)
        raw = {tuple(a + b for a, b in zip(m, y)):
               w * obs_marginal_neutral(shape, alpha, m, y, sizes)
               for m, w in omega.values.items()}
        total = sum(raw.values())
        for label, value in out.values.items():
            assert value == pytest.approx(raw[label] / total, rel=0.02)


class TestCombine:
    def test_trivial_future_reduces_to_filtering(self, illustration_cache):
        filt = Mixture({(2, 1, 1, 2): 0.3, (1, 2, 2, 1): 0.7})
        omega = CostToGoEntry(values={ZERO: 1.0})
        entry = combine(illustration_cache, filt, omega, None)
        assert set(entry.weights) == {(ZERO, n) for n in filt.components}
        for (m, n), w in entry.weights.items():
            assert w == pytest.approx(filt.components[n], rel=1e-12)
        flat = entry.flattened()
        assert flat.components == pytest.approx(filt.components)

    def test_single_pair(self, illustration_cache):
        entry = combine(illustration_cache, Mixture({(1, 0, 1, 0): 1.0}),
                        CostToGoEntry(values={(0, 1, 0, 1): 1.0}), None)
        assert entry.weights == {((0, 1, 0, 1), (1, 0, 1, 0)): 1.0}

    def test_neutral_pair_weights_match_closed_form(self, neutral_cache):
        from oracles import moment_neutral
        shape = neutral_cache.params.shape
        alpha = neutral_cache.params.alpha
        filt = Mixture({(2, 0, 0, 0): 0.4, (0, 0, 2, 0): 0.6})
        omega = CostToGoEntry(values={(1, 0, 0, 0): 0.5, (0, 0, 1, 0): 0.5})
        entry = combine(neutral_cache, filt, omega, None)

        def pairing(m, n):
            s = tuple(a + b for a, b in zip(m, n))
            return moment_neutral(shape, alpha, s) / (
                moment_neutral(shape, alpha, m) * moment_neutral(shape, alpha, n))

        raw = {(m, n): om * cn * pairing(m, n)
               for m, om in omega.values.items()
               for n, cn in filt.components.items()}
        total = sum(raw.values())
        for pair, w in entry.weights.items():
            assert w == pytest.approx(raw[pair] / total, rel=0.05)


class TestRunSmoother:
    def test_two_observation_mean_matches_direct_formula(self, illustration_cache):
        """Smoothing via pair weights equals the brute-force mixture built
        directly from the backward message and conjugacy."""
        cache = illustration_cache
        y0, y1 = (2, 1, 1, 2), (1, 2, 2, 1)
        obs = make_obs(cache.params.shape, [0.0, 0.1], [y0, y1])
        runner = TransitionRunner(cache, 2000, root_seed=26)
        trace = run_filter(cache, obs, 2000, 26, None, runner=runner)
        result = run_smoother(cache, obs, trace, 2000, 26, None, runner=runner)
        assert len(result) == 1

        omega = runner.transition(y1, 0.1).mass
        raw = {m: w * np.exp(cache.log_value(tuple(a + b for a, b in zip(m, y0)))
                             - cache.log_value(m))
               for m, w in omega.items()}
        total = sum(raw.values())
        want = np.zeros(4)
        for m, w in raw.items():
            want += (w / total) * cache.component_mean(
                tuple(a + b for a, b in zip(m, y0)))
        got = result.entries[0].mean(cache)
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_zero_count_future_changes_nothing(self, illustration_cache):
        cache = illustration_cache
        y0, y1 = (2, 1, 1, 2), (1, 2, 2, 1)
        short = make_obs(cache.params.shape, [0.0, 0.1], [y0, y1])
        long = make_obs(cache.params.shape, [0.0, 0.1, 0.2], [y0, y1, ZERO])

        trace_s = run_filter(cache, short, 1500, 27, None)
        result_s = run_smoother(cache, short, trace_s, 1500, 27, None)
        trace_l = run_filter(cache, long, 1500, 27, None)
        result_l = run_smoother(cache, long, trace_l, 1500, 27, None)

        # with only a zero-count observation in the future, smoothing at the
        # second time equals filtering there
        pairs = result_l.entries[1].weights
        filt = trace_l.steps[1].filtering.components
        assert {n: w for (m, n), w in pairs.items()} == pytest.approx(filt)
        # and the earlier marginal is untouched by the empty extra observation
        assert result_l.entries[0].weights == pytest.approx(result_s.entries[0].weights)

    def test_weights_sum_to_one_with_pruning(self, illustration_cache):
        cache = illustration_cache
        obs = make_obs(cache.params.shape, [0.0, 0.1, 0.2],
                       [(2, 1, 1, 2), (1, 2, 2, 1), (2, 1, 2, 1)])
        trace = run_filter(cache, obs, 1200, 28, PrunePolicy("topmass", 0.99))
        result = run_smoother(cache, obs, trace, 1200, 28,
                              PrunePolicy("topmass", 0.99))
        assert len(result) == 2
        for entry in result.entries:
            assert sum(entry.weights.values()) == pytest.approx(1.0, abs=1e-10)

    def test_needs_two_observations(self, illustration_cache):
        obs = make_obs(illustration_cache.params.shape, [0.0], [(2, 1, 1, 2)])
        trace = run_filter(illustration_cache, obs, 100, 29, None)
        with pytest.raises(ValueError, match="two observations"):
            run_smoother(illustration_cache, obs, trace, 100, 29, None)


class TestSerialization:
    def test_json_roundtrip(self, illustration_cache):
        cache = illustration_cache
        obs = make_obs(cache.params.shape, [0.0, 0.1], [(2, 1, 1, 2), (1, 2, 2, 1)])
        trace = run_filter(cache, obs, 500, 30, None)
        result = run_smoother(cache, obs, trace, 500, 30, None)
        text = smoothing_to_json(result)
        back = smoothing_from_json(text)
        assert smoothing_to_json(back) == text
