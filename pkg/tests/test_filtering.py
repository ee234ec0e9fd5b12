import json

import numpy as np
import pytest

from cwfilter.constants import ConstantCache
from cwfilter.diffusion import ObservationSet
from cwfilter.dual import PrunePolicy, TransitionRunner
from cwfilter.filtering import (
    Mixture,
    density_grid,
    init_filter,
    marginal_grid,
    predict_step,
    run_filter,
    trace_from_json,
    trace_to_json,
    update_step,
    write_density_grid_csv,
    write_diagnostics_csv,
)

from conftest import make_params
from oracles import obs_marginal_neutral


def make_obs(shape, times, counts, sizes=None):
    counts = tuple(tuple(c) for c in counts)
    if sizes is None:
        sizes = tuple(tuple(int(sum(c[shape.slice(l)])) for l in range(shape.n_loci))
                      for c in counts)
    return ObservationSet(shape=shape, times=tuple(times), sizes=sizes, counts=counts)


class TestMixture:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            Mixture({})
        with pytest.raises(ValueError):
            Mixture({(1, 0, 0, 0): 0.6, (0, 1, 0, 0): 0.5})
        with pytest.raises(ValueError):
            Mixture({(1, 0, 0, 0): 1.2, (0, 1, 0, 0): -0.2})

    def test_mean_weights_components(self, neutral_cache):
        mix = Mixture({(2, 0, 0, 0): 0.5, (0, 2, 0, 0): 0.5})
        mean = mix.mean(neutral_cache)
        # the two components mirror each other, so locus 0 averages out
        assert mean[0] == pytest.approx(0.5, abs=0.01)


class TestInitFilter:
    def test_single_component(self, illustration_cache):
        mix = init_filter(illustration_cache, (4, 6, 4, 6))
        assert mix.components == {(4, 6, 4, 6): 1.0}

    def test_posterior_mean_between_prior_and_data(self, neutral_cache):
        y = (3, 7, 2, 8)
        mix = init_filter(neutral_cache, y)
        post = mix.mean(neutral_cache)
        prior = neutral_cache.component_mean((0, 0, 0, 0))
        freq = np.asarray(y, dtype=float) / 10.0
        for i in range(4):
            lo, hi = sorted((prior[i], freq[i]))
            assert lo - 0.02 <= post[i] <= hi + 0.02


class TestPredictStep:
    def test_zero_dt_is_identity(self, illustration_cache):
        runner = TransitionRunner(illustration_cache, 100, root_seed=1)
        mix = Mixture({(2, 0, 1, 1): 0.25, (1, 1, 1, 1): 0.75})
        out = predict_step(runner, mix, 0.0, None)
        assert out.components == pytest.approx(mix.components)

    def test_single_component_equals_its_transition(self, illustration_cache):
        runner = TransitionRunner(illustration_cache, 2000, root_seed=2)
        mix = Mixture({(2, 0, 1, 1): 1.0})
        out = predict_step(runner, mix, 0.1, None)
        et = runner.transition((2, 0, 1, 1), 0.1)
        assert out.components == pytest.approx(et.mass)

    def test_two_components_merge_by_hand(self, illustration_cache):
        runner = TransitionRunner(illustration_cache, 2000, root_seed=3)
        mix = Mixture({(2, 0, 1, 1): 0.3, (0, 2, 1, 1): 0.7})
        out = predict_step(runner, mix, 0.1, None)
        merged = {}
        for label, w in mix.components.items():
            for target, p in runner.transition(label, 0.1).mass.items():
                merged[target] = merged.get(target, 0.0) + w * p
        assert out.components == pytest.approx(merged)
        assert sum(out.components.values()) == pytest.approx(1.0, abs=1e-12)


class TestUpdateStep:
    def test_empty_observation_keeps_mixture(self, illustration_cache):
        mix = Mixture({(2, 0, 1, 1): 0.4, (1, 1, 1, 1): 0.6})
        out = update_step(illustration_cache, mix, (0, 0, 0, 0), [0, 0], None)
        assert out.components == pytest.approx(mix.components)

    def test_single_component_conjugacy(self, illustration_cache):
        mix = Mixture({(1, 0, 1, 0): 1.0})
        out = update_step(illustration_cache, mix, (4, 6, 4, 6), [10, 10], None)
        assert out.components == {(5, 6, 5, 6): 1.0}

    def test_two_component_bayes_weights_neutral(self, neutral_cache):
        shape = neutral_cache.params.shape
        alpha = neutral_cache.params.alpha
        y, sizes = (3, 1, 2, 2), [4, 4]
        mix = Mixture({(2, 0, 0, 0): 0.5, (0, 0, 0, 2): 0.5})
        out = update_step(neutral_cache, mix, y, sizes, None)
        lik = {m: obs_marginal_neutral(shape, alpha, m, y, sizes)
               for m in mix.components}
        total = sum(0.5 * v for v in lik.values())
        for m, w in mix.components.items():
            label = tuple(a + b for a, b in zip(m, y))
            want = 0.5 * lik[m] / total
            assert out.components[label] == pytest.approx(want, rel=0.02)


class TestRunFilter:
    def test_single_observation_is_init_only(self, illustration_cache):
        obs = make_obs(illustration_cache.params.shape, [0.0], [(4, 6, 4, 6)])
        trace = run_filter(illustration_cache, obs, 100, 4, None)
        assert len(trace) == 1
        assert trace.steps[0].predictive is None
        assert trace.final.components == {(4, 6, 4, 6): 1.0}

    def test_weights_sum_to_one_every_step(self, illustration_cache):
        obs = make_obs(illustration_cache.params.shape, [0.0, 0.1, 0.2],
                       [(2, 3, 1, 4), (3, 2, 2, 3), (1, 4, 3, 2)])
        trace = run_filter(illustration_cache, obs, 1500, 5,
                           PrunePolicy("topmass", 0.999))
        for step in trace.steps:
            assert sum(step.filtering.components.values()) == pytest.approx(1.0, abs=1e-10)
            if step.predictive is not None:
                assert sum(step.predictive.components.values()) == pytest.approx(1.0, abs=1e-10)

    def test_seed_determinism_byte_identical(self, illustration_cache):
        obs = make_obs(illustration_cache.params.shape, [0.0, 0.1],
                       [(2, 3, 1, 4), (3, 2, 2, 3)])
        a = run_filter(illustration_cache, obs, 800, 6, PrunePolicy("topmass", 0.999))
        b = run_filter(illustration_cache, obs, 800, 6, PrunePolicy("topmass", 0.999))
        assert trace_to_json(a) == trace_to_json(b)
        c = run_filter(illustration_cache, obs, 800, 7, PrunePolicy("topmass", 0.999))
        assert trace_to_json(a) != trace_to_json(c)

    def test_neutral_filter_factorizes_across_loci(self):
        """With no coupling the two-locus filter equals two single-locus filters."""
        data = [((2, 3), (1, 4)), ((3, 2), (3, 2))]
        times = [0.0, 0.1]
        seeds = [100, 101, 102, 103]

        joint_means, split_means = [], []
        for seed in seeds:
            joint = ConstantCache(make_params(), n_samples=20_000, seed=seed)
            obs = make_obs(joint.params.shape, times,
                           [d[0] + d[1] for d in data])
            trace = run_filter(joint, obs, 2000, seed, None)
            joint_means.append(trace.final.mean(joint))

            per_locus = []
            for l in range(2):
                single = ConstantCache(make_params(alleles=(2,)),
                                       n_samples=20_000, seed=seed + 10 * (l + 1))
                obs_l = make_obs(single.params.shape, times, [d[l] for d in data])
                trace_l = run_filter(single, obs_l, 2000, seed + 10 * (l + 1), None)
                per_locus.append(trace_l.final.mean(single))
            split_means.append(np.concatenate(per_locus))

        joint_means = np.asarray(joint_means)
        split_means = np.asarray(split_means)
        gap = joint_means.mean(axis=0) - split_means.mean(axis=0)
        se = np.sqrt(joint_means.var(axis=0, ddof=1) / len(seeds)
                     + split_means.var(axis=0, ddof=1) / len(seeds))
        assert np.all(np.abs(gap) <= 3 * se + 1e-3), (gap, se)


class TestTraceSerialization:
    def test_json_roundtrip(self, illustration_cache):
        obs = make_obs(illustration_cache.params.shape, [0.0, 0.1],
                       [(2, 3, 1, 4), (3, 2, 2, 3)])
        trace = run_filter(illustration_cache, obs, 500, 8, None)
        text = trace_to_json(trace)
        back = trace_from_json(text)
        assert trace_to_json(back) == text
        payload = json.loads(text)
        step = payload["steps"][1]
        assert {"m", "w"} == set(step["filtering"][0].keys())


class TestDensityGrids:
    def test_uniform_component_is_flat(self):
        cache = ConstantCache(make_params(), n_samples=1000, seed=9)
        centers, dens = density_grid(cache, Mixture({(0, 0, 0, 0): 1.0}), 8)
        np.testing.assert_allclose(dens, 1.0, atol=1e-12)

    def test_grid_mass_near_one(self, illustration_cache):
        mix = Mixture({(4, 6, 4, 6): 0.5, (5, 6, 5, 6): 0.5})
        centers, dens = density_grid(cache=illustration_cache, mix=mix, grid_n=60)
        assert dens.sum() / 60**2 == pytest.approx(1.0, abs=1e-2)

    def test_rejects_other_layouts(self):
        cache = ConstantCache(make_params(alleles=(3, 2)), n_samples=500, seed=10)
        with pytest.raises(ValueError, match="biallelic"):
            density_grid(cache, Mixture({(0,) * 5: 1.0}), 8)

    def test_marginal_grid_integrates_to_one(self, illustration_cache):
        mix = Mixture({(4, 6, 4, 6): 1.0})
        centers, dens = marginal_grid(illustration_cache, mix, locus=0, allele=0,
                                      grid_n=40)
        assert dens.sum() / 40 == pytest.approx(1.0, abs=1e-6)

    def test_csv_export(self, tmp_path):
        cache = ConstantCache(make_params(), n_samples=500, seed=11)
        centers, dens = density_grid(cache, Mixture({(0, 0, 0, 0): 1.0}), 4)
        out = tmp_path / "grid.csv"
        write_density_grid_csv(centers, dens, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "x1,x2,density"
        assert len(lines) == 1 + 16


class TestDiagnostics:
    def test_diagnostics_csv(self, tmp_path, illustration_cache):
        obs = make_obs(illustration_cache.params.shape, [0.0, 0.1],
                       [(2, 3, 1, 4), (3, 2, 2, 3)])
        trace = run_filter(illustration_cache, obs, 300, 12, None)
        out = tmp_path / "diag.csv"
        write_diagnostics_csv(trace, out)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("index,time,dt,")
