"""Forward simulation of the coupled diffusion and of multinomial observations.

The diffusion is simulated through the finite-population chain whose scaling
limit it is: a population of ``pop_size`` haploid individuals per locus, one
generation per ``1 / pop_size`` time units.  Each generation resamples every
locus multinomially with reproduction weights tilted by the effective
selection, then applies deterministic parent-independent mutation mixing.
One-generation moments match the diffusion's drift and covariance to first
order in ``1 / pop_size``, which is what the tests pin down.

Replicate paths are vectorized: the per-locus multinomial with per-path
probabilities is drawn through the conditional-binomial decomposition, so a
generation costs a handful of array operations regardless of the number of
paths.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .constants import ConstantCache
from .model import (
    FloatArray,
    LociShape,
    ModelParams,
    as_multi_index,
    local_selection,
    validate_point,
)

DEFAULT_POP_SIZE = 10_000


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Discrete skeleton of one signal path; times are generation-aligned."""

    times: tuple[float, ...]
    states: FloatArray  # (n_times, total)

    def __post_init__(self) -> None:
        if len(self.times) != self.states.shape[0]:
            raise ValueError("times and states must have matching lengths")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")


@dataclass(frozen=True)
class ObservationSet:
    """Multinomial count data: per time, per-locus sizes and a count vector."""

    shape: LociShape
    times: tuple[float, ...]
    sizes: tuple[tuple[int, ...], ...]   # per time, per locus
    counts: tuple[tuple[int, ...], ...]  # per time, flat multi-index

    def __post_init__(self) -> None:
        if not (len(self.times) == len(self.sizes) == len(self.counts)):
            raise ValueError("times, sizes and counts must have matching lengths")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("observation times must be strictly increasing")
        for t, per_locus, y in zip(self.times, self.sizes, self.counts):
            key = as_multi_index(self.shape, y)
            for l in range(self.shape.n_loci):
                total = sum(key[self.shape.slice(l)])
                if total != per_locus[l]:
                    raise ValueError(
                        f"t={t}: locus {l} counts sum to {total}, declared {per_locus[l]}")

    def __len__(self) -> int:
        return len(self.times)


def _multinomial_rows(rng: np.random.Generator, n: int, probs: FloatArray) -> np.ndarray:
    """Multinomial draws with a different probability row per path."""
    n_paths, k = probs.shape
    counts = np.zeros((n_paths, k), dtype=np.int64)
    left_n = np.full(n_paths, int(n), dtype=np.int64)
    left_p = np.ones(n_paths)
    for i in range(k - 1):
        p_i = probs[:, i]
        frac = np.clip(p_i / np.maximum(left_p, 1e-300), 0.0, 1.0)
        c = rng.binomial(left_n, frac)
        counts[:, i] = c
        left_n -= c
        left_p = np.maximum(left_p - p_i, 0.0)
    counts[:, k - 1] = left_n
    return counts


def _advance_generations(params: ModelParams, freqs: FloatArray, n_generations: int,
                         pop_size: int, rng: np.random.Generator) -> FloatArray:
    """Advance a (n_paths, total) block of states by whole generations."""
    shape = params.shape
    mut_scale = []
    for l in range(shape.n_loci):
        sl = shape.slice(l)
        total_rate = params.alpha[sl].sum()
        if total_rate >= 2.0 * pop_size:
            raise SimulationError("pop_size too small for the mutation rates")
        mut_scale.append((1.0 - total_rate / (2.0 * pop_size),
                          params.alpha[sl] / (2.0 * pop_size)))

    x = np.array(freqs, dtype=np.float64)
    for _ in range(n_generations):
        tilt = 1.0 + local_selection(params, x) / pop_size
        for l in range(shape.n_loci):
            sl = shape.slice(l)
            w = x[:, sl] * tilt[:, sl]
            w /= w.sum(axis=1, keepdims=True)
            counts = _multinomial_rows(rng, pop_size, w)
            keep, inflow = mut_scale[l]
            x[:, sl] = counts / pop_size * keep + inflow
    return x


def simulate_paths(params: ModelParams, x0, t: float, n_paths: int,
                   pop_size: int = DEFAULT_POP_SIZE, seed=0) -> FloatArray:
    """Terminal states of ``n_paths`` replicate signal paths after time ``t``.

    ``t`` snaps to the nearest whole number of generations.
    """
    if pop_size < 100:
        raise ValueError("pop_size must be >= 100")
    x0 = validate_point(params.shape, x0)
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(seq)
    gens = int(round(float(t) * pop_size))
    block = np.tile(x0, (int(n_paths), 1))
    return _advance_generations(params, block, gens, pop_size, rng)


def simulate_cwf(params: ModelParams, x0, times, pop_size: int = DEFAULT_POP_SIZE,
                 seed=0) -> Trajectory:
    """One signal trajectory recorded at the requested times.

    Times are snapped to the generation grid ``1 / pop_size``; the snapped
    values are what the trajectory reports, so downstream time gaps are the
    gaps actually simulated.
    """
    if pop_size < 100:
        raise ValueError("pop_size must be >= 100")
    x0 = validate_point(params.shape, x0)
    times = [float(t) for t in times]
    if any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be nonnegative and strictly increasing")
    gens = [int(round(t * pop_size)) for t in times]
    if any(b <= a for a, b in zip(gens, gens[1:])):
        raise SimulationError(
            "distinct requested times collapsed onto the same generation; "
            "increase pop_size or spread the times")

    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(seq)
    states = []
    x = x0[None, :].copy()
    prev = 0
    for g in gens:
        x = _advance_generations(params, x, g - prev, pop_size, rng)
        prev = g
        states.append(validate_point(params.shape, x[0]))
    return Trajectory(times=tuple(g / pop_size for g in gens),
                      states=np.asarray(states))


def sample_stationary(cache: ConstantCache, seed) -> FloatArray:
    """One draw from the stationary law via importance resampling.

    Resamples the cache's proposal draws with fitness-tilt weights; exact when
    selection is off (all weights equal).  Degenerate weight sets indicate the
    cache needs more samples.
    """
    ess = cache.effective_sample_size()
    if ess < 10:
        raise SimulationError(
            f"stationary resampling degenerate (effective sample size {ess:.1f}); "
            "rebuild the cache with more samples")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(seq)
    probs = np.exp(cache.stationary_log_weights())
    probs /= probs.sum()
    idx = rng.choice(cache.n_samples, p=probs)
    return cache.samples[idx].copy()


def sample_observation(shape: LociShape, x, sizes, seed) -> tuple[int, ...]:
    """Independent multinomial count vectors per locus at the state ``x``."""
    x = validate_point(shape, x)
    sizes = [int(s) for s in sizes]
    if len(sizes) != shape.n_loci:
        raise ValueError(f"need {shape.n_loci} per-locus sizes")
    if any(s < 0 for s in sizes):
        raise ValueError("sizes must be >= 0")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(seq)
    counts: list[int] = []
    for l in range(shape.n_loci):
        block = x[shape.slice(l)]
        block = block / block.sum()
        counts.extend(int(c) for c in rng.multinomial(sizes[l], block))
    return tuple(counts)


def write_trajectory_csv(shape: LociShape, traj: Trajectory, path) -> None:
    header = ["time"] + [f"x_{l}_{i}" for l in range(shape.n_loci)
                         for i in range(shape.alleles[l])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, row in zip(traj.times, traj.states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_observations_csv(obs: ObservationSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "locus", "type", "count"])
        for t, y in zip(obs.times, obs.counts):
            for l in range(obs.shape.n_loci):
                sl = obs.shape.slice(l)
                for i, c in enumerate(y[sl]):
                    writer.writerow([repr(float(t)), l, i, int(c)])


def read_observations_csv(shape: LociShape, path) -> ObservationSet:
    rows: dict[float, dict[tuple[int, int], int]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"time", "locus", "type", "count"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"observation CSV must have columns {sorted(required)}")
        for rec in reader:
            t = float(rec["time"])
            rows.setdefault(t, {})[(int(rec["locus"]), int(rec["type"]))] = int(rec["count"])
    times = sorted(rows)
    counts, sizes = [], []
    for t in times:
        flat = [0] * shape.total
        for (l, i), c in rows[t].items():
            flat[shape.offsets[l] + i] = c
        counts.append(tuple(flat))
        sizes.append(tuple(int(sum(flat[shape.slice(l)])) for l in range(shape.n_loci)))
    return ObservationSet(shape=shape, times=tuple(times), sizes=tuple(sizes),
                          counts=tuple(counts))
