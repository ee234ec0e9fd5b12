"""Experiment configuration: strict JSON loading.

The config document is JSON with four sections (``model``, ``simulation``,
``observation``, ``inference``) plus an ``output`` directory.  Parsing is
strict: unknown keys are errors, so a typo in a selection parameter cannot
silently corrupt a run.  Keys starting with an underscore are ignored
everywhere, which is how shipped configs carry comments.

Coupling is specified block-wise: a list of ``{"loci": [l, r], "block":
[[...]]}`` items with 0-based locus indices; the symmetric dense matrix is
assembled here and all model invariants are checked on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dual import PrunePolicy
from .model import LociShape, ModelParams


class ConfigError(ValueError):
    pass


def _require_keys(mapping: dict, allowed: set[str], required: set[str],
                  where: str) -> None:
    keys = {k for k in mapping if not k.startswith("_")}
    unknown = keys - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; "
                          f"allowed keys are {sorted(allowed)}")
    missing = required - keys
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}")


def _flatten_per_locus(shape: LociShape, value, where: str) -> np.ndarray:
    try:
        parts = [np.asarray(v, dtype=np.float64).ravel() for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected per-locus lists of numbers") from exc
    if len(parts) != shape.n_loci:
        raise ConfigError(f"{where}: expected {shape.n_loci} per-locus lists, "
                          f"got {len(parts)}")
    for l, part in enumerate(parts):
        if part.size != shape.alleles[l]:
            raise ConfigError(f"{where}: locus {l} needs {shape.alleles[l]} "
                              f"entries, got {part.size}")
    return np.concatenate(parts)


@dataclass(frozen=True)
class SimulationConfig:
    pop_size: int
    x0: str | tuple[float, ...]  # "stationary" or explicit frequencies
    seed: int


@dataclass(frozen=True)
class ObservationConfig:
    times: tuple[float, ...]
    sizes: tuple[tuple[int, ...], ...]
    counts: tuple[tuple[int, ...], ...] | None  # None: counts come from data files


@dataclass(frozen=True)
class InferenceConfig:
    mc_samples: int
    replicates: int
    prune: PrunePolicy | None
    grid: int


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    simulation: SimulationConfig
    observation: ObservationConfig
    inference: InferenceConfig
    output: str


def _parse_model(section: dict) -> ModelParams:
    _require_keys(section, {"loci", "alpha", "sigma", "coupling"},
                  {"loci", "alpha"}, "model")
    try:
        shape = LociShape(tuple(int(k) for k in section["loci"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model.loci: {exc}") from exc
    alpha = _flatten_per_locus(shape, section["alpha"], "model.alpha")
    if "sigma" in section:
        sigma = _flatten_per_locus(shape, section["sigma"], "model.sigma")
    else:
        sigma = np.zeros(shape.total)
    coupling = np.zeros((shape.total, shape.total))
    for idx, item in enumerate(section.get("coupling", [])):
        where = f"model.coupling[{idx}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{where}: expected an object with 'loci' and 'block'")
        _require_keys(item, {"loci", "block"}, {"loci", "block"}, where)
        try:
            l, r = (int(v) for v in item["loci"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.loci: expected two locus indices") from exc
        if not (0 <= l < shape.n_loci and 0 <= r < shape.n_loci):
            raise ConfigError(f"{where}.loci: indices out of range for "
                              f"{shape.n_loci} loci")
        if l == r:
            raise ConfigError(f"{where}: diagonal coupling blocks must be zero, "
                              f"got a block for locus pair ({l}, {l})")
        block = np.asarray(item["block"], dtype=np.float64)
        want = (shape.alleles[l], shape.alleles[r])
        if block.shape != want:
            raise ConfigError(f"{where}.block: expected shape {want}, got {block.shape}")
        sl, sr = shape.slice(l), shape.slice(r)
        coupling[sl, sr] = block
        coupling[sr, sl] = block.T
    try:
        return ModelParams(shape=shape, alpha=alpha, sigma=sigma, coupling=coupling)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _parse_simulation(section: dict, shape: LociShape) -> SimulationConfig:
    _require_keys(section, {"pop_size", "x0", "seed"}, {"seed"}, "simulation")
    pop_size = int(section.get("pop_size", 10_000))
    if pop_size < 100:
        raise ConfigError("simulation.pop_size must be >= 100")
    x0 = section.get("x0", "stationary")
    if isinstance(x0, str):
        if x0 != "stationary":
            raise ConfigError(f"simulation.x0: expected 'stationary' or "
                              f"frequencies, got {x0!r}")
    else:
        x0 = tuple(float(v) for v in _flatten_per_locus(shape, x0, "simulation.x0"))
    return SimulationConfig(pop_size=pop_size, x0=x0, seed=int(section["seed"]))


def _parse_observation(section: dict, shape: LociShape) -> ObservationConfig:
    _require_keys(section, {"times", "sizes", "counts"}, {"times", "sizes"},
                  "observation")
    times = tuple(float(t) for t in section["times"])
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("observation.times must be strictly increasing")
    raw_sizes = section["sizes"]
    if raw_sizes and isinstance(raw_sizes[0], (int, float)):
        raw_sizes = [raw_sizes] * len(times)
    if len(raw_sizes) != len(times):
        raise ConfigError(f"observation.sizes: expected {len(times)} per-time "
                          f"entries (or one shared entry), got {len(raw_sizes)}")
    sizes = []
    for j, entry in enumerate(raw_sizes):
        entry = [int(v) for v in entry]
        if len(entry) != shape.n_loci or any(v < 0 for v in entry):
            raise ConfigError(f"observation.sizes[{j}]: need {shape.n_loci} "
                              "nonnegative per-locus sizes")
        sizes.append(tuple(entry))
    counts = None
    if "counts" in section:
        raw_counts = section["counts"]
        if len(raw_counts) != len(times):
            raise ConfigError(f"observation.counts: expected {len(times)} entries, "
                              f"got {len(raw_counts)}")
        counts = []
        for j, entry in enumerate(raw_counts):
            flat = _flatten_per_locus(shape, entry, f"observation.counts[{j}]")
            if np.any(flat < 0) or np.any(flat != np.round(flat)):
                raise ConfigError(f"observation.counts[{j}]: counts must be "
                                  "nonnegative integers")
            key = tuple(int(v) for v in flat)
            for l in range(shape.n_loci):
                got = sum(key[shape.slice(l)])
                if got != sizes[j][l]:
                    raise ConfigError(
                        f"observation.counts[{j}]: locus {l} counts sum to {got}, "
                        f"declared size is {sizes[j][l]}")
            counts.append(key)
        counts = tuple(counts)
    return ObservationConfig(times=times, sizes=tuple(sizes), counts=counts)


def _parse_inference(section: dict) -> InferenceConfig:
    _require_keys(section, {"mc_samples", "replicates", "prune", "grid"},
                  set(), "inference")
    mc_samples = int(section.get("mc_samples", 100_000))
    replicates = int(section.get("replicates", 10_000))
    if mc_samples < 1 or replicates < 1:
        raise ConfigError("inference.mc_samples and inference.replicates must be >= 1")
    prune_raw = section.get("prune", "topmass:0.999")
    if prune_raw is None:
        policy = None
    else:
        try:
            policy = PrunePolicy.parse(prune_raw)
        except ValueError as exc:
            raise ConfigError(f"inference.prune: {exc}") from exc
    grid = int(section.get("grid", 50))
    if grid < 2:
        raise ConfigError("inference.grid must be >= 2")
    return InferenceConfig(mc_samples=mc_samples, replicates=replicates,
                           prune=policy, grid=grid)


def parse_config(data: dict, where: str = "config") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: top level must be an object")
    _require_keys(data, {"model", "simulation", "observation", "inference", "output"},
                  {"model", "simulation", "observation"}, where)
    params = _parse_model(data["model"])
    simulation = _parse_simulation(data["simulation"], params.shape)
    observation = _parse_observation(data["observation"], params.shape)
    inference = _parse_inference(data.get("inference", {}))
    output = data.get("output", "runs/out")
    if not isinstance(output, str) or not output:
        raise ConfigError("output: expected a nonempty directory path")
    return ExperimentConfig(params=params, simulation=simulation,
                            observation=observation, inference=inference,
                            output=output)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    return parse_config(data, where=str(path))
