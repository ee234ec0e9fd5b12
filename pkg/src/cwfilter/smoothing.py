"""Marginal smoothing: backward likelihood messages combined with the filter.

The conditional law of the signal at an interior time given the whole dataset
is a two-index mixture: one index from the forward filter, one from a
backward "cost-to-go" message expanding the likelihood of all later
observations in moment-normalized monomials.

The backward message recursion mirrors the forward machinery run in reverse:
reweight by the observation marginal, absorb the counts into the label,
propagate through the dual over the gap.  Messages are kept normalized purely
for numerical hygiene (their overall scale cancels in the final weights); the
dropped log-scale factors are recorded.

Combining uses the product rule for moment-normalized monomials,

    h(x, m) h(x, n) = [k(m + n) / (k(m) k(n))] h(x, m + n),

so a filter component n and a message component m pair into the kernel
labeled m + n with weight proportional to

    omega(m) * c(n) * k(m + n) / (k(m) k(n)).

The pairing factor is the reciprocal of :meth:`ConstantCache.combination_const`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constants import ConstantCache
from .diffusion import ObservationSet
from .dual import MultiIndex, PrunePolicy, TransitionRunner, prune
from .filtering import FilterTrace, Mixture
from .model import as_multi_index


class SmoothingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CostToGoEntry:
    """One backward message: hygiene-normalized weights plus the dropped scale."""

    values: dict[MultiIndex, float]
    log_scale: float = 0.0

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("cost-to-go entry needs at least one component")
        if any(v <= 0 for v in self.values.values()):
            raise ValueError("cost-to-go values must be positive")


@dataclass(frozen=True)
class SmoothingEntry:
    """Smoothing mixture at one time index: pair labels (m, n) to weights."""

    index: int
    time: float
    weights: dict[tuple[MultiIndex, MultiIndex], float]

    def __post_init__(self) -> None:
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"smoothing weights sum to {total!r}, not 1")

    def flattened(self) -> Mixture:
        """Collapse pair labels to their sums (the actual kernel indices)."""
        merged: dict[MultiIndex, float] = {}
        for (m, n), w in self.weights.items():
            label = tuple(a + b for a, b in zip(m, n))
            merged[label] = merged.get(label, 0.0) + w
        return Mixture.normalized(merged)

    def mean(self, cache: ConstantCache) -> np.ndarray:
        return self.flattened().mean(cache)


@dataclass(frozen=True)
class SmoothingResult:
    entries: tuple[SmoothingEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def init_cost_to_go(runner: TransitionRunner, y_last, dt_last: float) -> CostToGoEntry:
    """Message for the final gap: dual arrival law started from the last counts."""
    key = as_multi_index(runner.cache.params.shape, y_last)
    et = runner.transition(key, float(dt_last))
    return CostToGoEntry(values=dict(sorted(et.mass.items())), log_scale=0.0)


def backward_step(runner: TransitionRunner, omega_next: CostToGoEntry, y,
                  sizes: Sequence[int], dt: float,
                  prune_policy: PrunePolicy | None) -> CostToGoEntry:
    """One backward recursion step.

    ``omega_next`` is the message just after the observation with counts ``y``
    (sizes ``sizes``); the result is the message just after the previous
    observation, ``dt`` earlier.  Each component is reweighted by the
    observation marginal at its own label, shifted by the counts, and pushed
    through the dual over the gap.
    """
    cache = runner.cache
    key = as_multi_index(cache.params.shape, y)
    acc: dict[MultiIndex, float] = {}
    for label, value in omega_next.values.items():
        lik = cache.obs_marginal(label, key, sizes)
        if lik <= 0:
            continue
        shifted = tuple(a + b for a, b in zip(label, key))
        et = runner.transition(shifted, float(dt))
        scale = value * lik
        for target, p in et.mass.items():
            acc[target] = acc.get(target, 0.0) + scale * p
    if not acc:
        raise SmoothingError(f"backward message vanished at counts {key}")
    total = sum(acc.values())
    normalized = {k: v / total for k, v in acc.items()}
    pruned = prune(normalized, prune_policy)
    return CostToGoEntry(values=pruned,
                         log_scale=omega_next.log_scale + float(np.log(total)))


def combine(cache: ConstantCache, filt: Mixture, omega: CostToGoEntry,
            prune_policy: PrunePolicy | None, *, index: int = 0,
            time: float = 0.0) -> SmoothingEntry:
    """Pair a filtering mixture with a backward message.

    Weight of the pair (m, n) is omega(m) * filter(n) * k(m+n) / (k(m) k(n)),
    normalized over all pairs; the pair contributes the kernel labeled m + n.
    """
    zero = (0,) * cache.params.shape.total
    log_zero = cache.log_value(zero)
    pair_sums = [tuple(a + b for a, b in zip(m, n))
                 for m in omega.values for n in filt.components]
    cache.log_normalizing_constants(list(omega.values) + list(filt.components)
                                    + pair_sums)
    raw: dict[tuple[MultiIndex, MultiIndex], float] = {}
    for m, om in omega.values.items():
        lm = cache.log_value(m)
        for n, cn in filt.components.items():
            ln = cache.log_value(n)
            ls = cache.log_value(tuple(a + b for a, b in zip(m, n)))
            pairing = np.exp(ls + log_zero - lm - ln)  # k(m+n) / (k(m) k(n))
            raw[(m, n)] = om * cn * pairing
    total = sum(raw.values())
    if total <= 0:
        raise SmoothingError("all pair weights vanished in the combination step")
    weights = {k: v / total for k, v in raw.items()}
    if prune_policy is not None:
        weights = prune(weights, prune_policy)
    return SmoothingEntry(index=index, time=time,
                          weights=dict(sorted(weights.items())))


def run_smoother(cache: ConstantCache, obs: ObservationSet, trace: FilterTrace,
                 n_replicates: int, root_seed: int,
                 prune_policy: PrunePolicy | None, *,
                 backend: str | None = None, workers: int = 1,
                 runner: TransitionRunner | None = None) -> SmoothingResult:
    """Backward pass over a filtered dataset.

    Produces the smoothing mixture at every index except the last (where
    smoothing and filtering coincide).  Passing the filter's
    :class:`TransitionRunner` reuses its memoized transitions; a fresh runner
    with the same root seed reproduces them exactly.
    """
    n_obs = len(obs)
    if n_obs < 2:
        raise ValueError("smoothing needs at least two observations")
    if len(trace) != n_obs:
        raise ValueError("filter trace and observation set lengths disagree")
    if runner is None:
        runner = TransitionRunner(cache, n_replicates, root_seed,
                                  backend=backend, workers=workers)

    last = n_obs - 1
    omega = init_cost_to_go(runner, obs.counts[last],
                            obs.times[last] - obs.times[last - 1])
    entries: list[SmoothingEntry] = []
    for i in range(last - 1, -1, -1):
        entries.append(combine(cache, trace.steps[i].filtering, omega,
                               prune_policy, index=i, time=obs.times[i]))
        if i > 0:
            omega = backward_step(runner, omega, obs.counts[i], obs.sizes[i],
                                  obs.times[i] - obs.times[i - 1], prune_policy)
    entries.reverse()
    return SmoothingResult(entries=tuple(entries))


def smoothing_to_json(result: SmoothingResult) -> str:
    payload = [{
        "index": e.index,
        "time": e.time,
        "weights": [{"m": list(m), "n": list(n), "w": w}
                    for (m, n), w in sorted(e.weights.items())],
    } for e in result.entries]
    return json.dumps({"entries": payload}, indent=2, sort_keys=True)


def smoothing_from_json(text: str) -> SmoothingResult:
    data = json.loads(text)
    entries = []
    for e in data["entries"]:
        weights = {(tuple(int(v) for v in item["m"]),
                    tuple(int(v) for v in item["n"])): float(item["w"])
                   for item in e["weights"]}
        entries.append(SmoothingEntry(index=int(e["index"]), time=float(e["time"]),
                                      weights=weights))
    return SmoothingResult(entries=tuple(entries))
