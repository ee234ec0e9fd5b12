"""Mixture filter for the partially observed coupled diffusion.

Conditional laws of the signal stay inside one family: finite mixtures of
tilted product-Dirichlet kernels, each kernel indexed by an integer
multi-index added to the mutation parameters.  Filtering therefore reduces to
bookkeeping on weighted multi-index labels:

* update: reweight every label by the marginal likelihood of the new counts
  under its kernel, then absorb the counts into the label;
* prediction: push every label through the dual process over the time gap and
  average the empirical arrival distributions.

A label always means "kernel with mutation parameters alpha + label", i.e.
observations are absorbed immediately; predictions then start the dual from
exactly the right states.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import ConstantCache
from .diffusion import ObservationSet
from .dual import MultiIndex, PrunePolicy, TransitionRunner, prune
from .model import as_multi_index

WEIGHT_ATOL = 1e-10


class FilterError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mixture:
    """Finite weighted collection of kernel labels; weights sum to one."""

    components: dict[MultiIndex, float]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("mixture needs at least one component")
        if any(w <= 0 for w in self.components.values()):
            raise ValueError("mixture weights must be strictly positive")
        total = sum(self.components.values())
        if abs(total - 1.0) > WEIGHT_ATOL:
            raise ValueError(f"mixture weights sum to {total!r}, not 1")

    def __len__(self) -> int:
        return len(self.components)

    def mean(self, cache: ConstantCache) -> np.ndarray:
        """Posterior mean: weight-averaged component means."""
        out = np.zeros(cache.params.shape.total)
        for label, w in self.components.items():
            out += w * cache.component_mean(label)
        return out

    def density(self, cache: ConstantCache, x) -> np.ndarray:
        """Mixture density at x (batch-safe)."""
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape[:-1])
        for label, w in self.components.items():
            out = out + w * cache.component_density(label, x)
        return out

    @staticmethod
    def normalized(raw: dict[MultiIndex, float]) -> "Mixture":
        total = sum(raw.values())
        if total <= 0:
            raise FilterError("cannot normalize: total mixture weight is zero")
        return Mixture({k: v / total for k, v in sorted(raw.items())})


@dataclass(frozen=True)
class FilterStep:
    index: int
    time: float
    dt: float | None            # gap from the previous observation; None at the start
    y: MultiIndex
    sizes: tuple[int, ...]
    predictive: Mixture | None  # None at the start (exact conjugate init)
    filtering: Mixture
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FilterTrace:
    steps: tuple[FilterStep, ...]

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final(self) -> Mixture:
        return self.steps[-1].filtering


def init_filter(cache: ConstantCache, y0) -> Mixture:
    """Exact conjugate posterior after the first observation: one kernel."""
    key = as_multi_index(cache.params.shape, y0)
    return Mixture({key: 1.0})


def predict_step(runner: TransitionRunner, filt: Mixture, dt: float,
                 prune_policy: PrunePolicy | None,
                 diagnostics: dict | None = None) -> Mixture:
    """Propagate a filtering mixture through the dual over the gap ``dt``.

    The predictive mixture is the weight-averaged empirical arrival
    distribution over all component labels, pruned and renormalized.  ``dt ==
    0`` is the exact identity.  When a ``diagnostics`` dict is supplied it
    receives the pruned-away mass and the replicate-abort count.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    transitions = runner.transitions(filt.components.keys(), float(dt))
    merged: dict[MultiIndex, float] = {}
    for label, w in filt.components.items():
        for target, p in transitions[label].mass.items():
            merged[target] = merged.get(target, 0.0) + w * p
    kept = prune(merged, prune_policy)
    if diagnostics is not None:
        diagnostics["pruned_mass_predictive"] = max(
            0.0, 1.0 - sum(merged[k] for k in kept))
        diagnostics["aborted_replicates"] = sum(
            transitions[label].n_aborted for label in filt.components)
    return Mixture.normalized(kept)


def update_step(cache: ConstantCache, pred: Mixture, y, sizes: Sequence[int],
                prune_policy: PrunePolicy | None,
                diagnostics: dict | None = None) -> Mixture:
    """Bayes update with multinomial counts ``y`` of per-locus sizes ``sizes``.

    Each component is reweighted by the marginal likelihood of the counts
    under its kernel, then the counts are absorbed into its label.  With all
    sizes zero the likelihood is flat and the mixture is returned unchanged.
    """
    key = as_multi_index(cache.params.shape, y)
    raw: dict[MultiIndex, float] = {}
    for label, w in pred.components.items():
        lik = cache.obs_marginal(label, key, sizes)
        if lik > 0:
            shifted = tuple(a + b for a, b in zip(label, key))
            raw[shifted] = raw.get(shifted, 0.0) + w * lik
    if not raw:
        raise FilterError(
            f"all {len(pred)} components got zero likelihood for counts {key}; "
            "the predictive support is incompatible with the data")
    total = sum(raw.values())
    normalized = {k: v / total for k, v in raw.items()}
    kept = prune(normalized, prune_policy)
    if diagnostics is not None:
        diagnostics["pruned_mass_update"] = max(
            0.0, 1.0 - sum(normalized[k] for k in kept))
    return Mixture.normalized(kept)


def run_filter(cache: ConstantCache, obs: ObservationSet, n_replicates: int,
               root_seed: int, prune_policy: PrunePolicy | None, *,
               backend: str | None = None, workers: int = 1,
               runner: TransitionRunner | None = None) -> FilterTrace:
    """Full forward pass over an observation set.

    Initializes with the first counts (exact conjugacy), then alternates
    dual-propagation prediction and multinomial Bayes update.  All transition
    seeds derive from ``root_seed``; identical inputs give identical traces.
    """
    if len(obs) == 0:
        raise ValueError("observation set is empty")
    if runner is None:
        runner = TransitionRunner(cache, n_replicates, root_seed,
                                  backend=backend, workers=workers)

    filt = init_filter(cache, obs.counts[0])
    steps = [FilterStep(index=0, time=obs.times[0], dt=None, y=obs.counts[0],
                        sizes=obs.sizes[0], predictive=None, filtering=filt,
                        diagnostics={"n_components": len(filt)})]
    for j in range(1, len(obs)):
        dt = obs.times[j] - obs.times[j - 1]
        diag: dict = {}
        pred = predict_step(runner, filt, dt, prune_policy, diagnostics=diag)
        filt = update_step(cache, pred, obs.counts[j], obs.sizes[j], prune_policy,
                           diagnostics=diag)
        diag["n_components_predictive"] = len(pred)
        diag["n_components"] = len(filt)
        top = sorted(filt.components, key=filt.components.get, reverse=True)[:5]
        diag["max_label_rel_se"] = max(
            se / value for value, se in
            (cache.normalizing_constant(label) for label in top))
        steps.append(FilterStep(index=j, time=obs.times[j], dt=dt, y=obs.counts[j],
                                sizes=obs.sizes[j], predictive=pred, filtering=filt,
                                diagnostics=diag))
    return FilterTrace(steps=tuple(steps))


# ------------------------------------------------------------------ exports


def _mixture_to_json(mix: Mixture | None):
    if mix is None:
        return None
    return [{"m": list(k), "w": w} for k, w in sorted(mix.components.items())]


def _mixture_from_json(data) -> Mixture | None:
    if data is None:
        return None
    return Mixture({tuple(int(v) for v in item["m"]): float(item["w"])
                    for item in data})


def trace_to_json(trace: FilterTrace) -> str:
    payload = [{
        "index": s.index,
        "time": s.time,
        "dt": s.dt,
        "y": list(s.y),
        "sizes": list(s.sizes),
        "predictive": _mixture_to_json(s.predictive),
        "filtering": _mixture_to_json(s.filtering),
        "diagnostics": s.diagnostics,
    } for s in trace.steps]
    return json.dumps({"steps": payload}, indent=2, sort_keys=True)


def trace_from_json(text: str) -> FilterTrace:
    data = json.loads(text)
    steps = []
    for s in data["steps"]:
        steps.append(FilterStep(
            index=int(s["index"]), time=float(s["time"]),
            dt=None if s["dt"] is None else float(s["dt"]),
            y=tuple(int(v) for v in s["y"]),
            sizes=tuple(int(v) for v in s["sizes"]),
            predictive=_mixture_from_json(s["predictive"]),
            filtering=_mixture_from_json(s["filtering"]),
            diagnostics=dict(s.get("diagnostics", {}))))
    return FilterTrace(steps=tuple(steps))


def density_grid(cache: ConstantCache, mix: Mixture, grid_n: int):
    """Mixture density over the unit square of leading frequencies.

    Requires the two-locus biallelic layout, where the state is determined by
    the first frequency at each locus.  Returns (centers, density matrix);
    cells where the density diverges hold ``inf``.
    """
    shape = cache.params.shape
    if shape.alleles != (2, 2):
        raise ValueError("the 2-D grid export needs the two-locus biallelic layout")
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    centers = (np.arange(grid_n) + 0.5) / grid_n
    u, v = np.meshgrid(centers, centers, indexing="ij")
    points = np.stack([u, 1.0 - u, v, 1.0 - v], axis=-1).reshape(-1, 4)
    dens = mix.density(cache, points).reshape(grid_n, grid_n)
    return centers, dens


def write_density_grid_csv(centers: np.ndarray, dens: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "density"])
        for i, a in enumerate(centers):
            for j, b in enumerate(centers):
                writer.writerow([repr(float(a)), repr(float(b)),
                                 repr(float(dens[i, j]))])


def marginal_grid(cache: ConstantCache, mix: Mixture, locus: int, allele: int,
                  grid_n: int):
    """1-D marginal density of one frequency coordinate, any layout.

    Marginalization is Monte Carlo: the cache's proposal draws are importance
    weighted by mixture density over proposal density and binned.
    """
    shape = cache.params.shape
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    col = shape.offsets[locus] + allele
    logw = np.full(cache.n_samples, -np.inf)
    for label, w in mix.components.items():
        key = as_multi_index(shape, label)
        logw = np.logaddexp(logw, np.log(w) + cache._log_terms(key)
                            - cache.log_value(key))
    weights = np.exp(logw - logw.max())
    weights /= weights.sum()
    edges = np.linspace(0.0, 1.0, grid_n + 1)
    hist, _ = np.histogram(cache.samples[:, col], bins=edges, weights=weights)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, hist * grid_n  # bin mass over bin width


def write_diagnostics_csv(trace: FilterTrace, path) -> None:
    fields = ["index", "time", "dt", "n_components_predictive", "n_components",
              "aborted_replicates", "pruned_mass_predictive", "pruned_mass_update",
              "max_label_rel_se"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for s in trace.steps:
            writer.writerow([
                s.index, repr(float(s.time)),
                "" if s.dt is None else repr(float(s.dt)),
                s.diagnostics.get("n_components_predictive", ""),
                s.diagnostics.get("n_components", len(s.filtering)),
                s.diagnostics.get("aborted_replicates", 0),
                s.diagnostics.get("pruned_mass_predictive", ""),
                s.diagnostics.get("pruned_mass_update", ""),
                s.diagnostics.get("max_label_rel_se", ""),
            ])
