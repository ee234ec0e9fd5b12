"""Command-line entry point.

Subcommands mirror the workflow: ``simulate`` draws a signal trajectory and
multinomial data, ``filter`` runs the forward mixture recursion, ``smooth``
adds the backward pass, ``constants`` and ``dual-transition`` expose the
Monte Carlo building blocks for inspection.

All outputs are plain CSV/JSON written to a staging directory and promoted
file-by-file on success, plus a deterministic ``manifest.json``; wall-clock
information lives in a separate ``timing.json`` so reruns with identical
configuration and seeds are byte-identical everywhere else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from ._kernels import default_backend
from .config import ConfigError, ExperimentConfig, load_config
from .constants import (
    ConstantCache,
    EstimateError,
    multi_indices_up_to,
    write_constants_csv,
)
from .diffusion import (
    ObservationSet,
    SimulationError,
    read_observations_csv,
    sample_observation,
    sample_stationary,
    simulate_cwf,
    write_observations_csv,
    write_trajectory_csv,
)
from .dual import (
    DualProcessError,
    PrunePolicy,
    TransitionRunner,
    estimate_transition,
    write_transition_csv,
)
from .filtering import (
    FilterError,
    density_grid,
    marginal_grid,
    run_filter,
    trace_from_json,
    trace_to_json,
    write_density_grid_csv,
    write_diagnostics_csv,
)
from .model import StateError, validate_point
from .seeding import derive_seed
from .smoothing import SmoothingError, run_smoother, smoothing_to_json

_ERROR_CATEGORIES = (
    (ConfigError, "config"),
    (EstimateError, "estimate"),
    (DualProcessError, "dual"),
    (FilterError, "filter"),
    (SmoothingError, "smoothing"),
    (SimulationError, "simulation"),
    (StateError, "model"),
    (OSError, "io"),
    (ValueError, "input"),
)


def _error_category(exc: Exception) -> str:
    for cls, name in _ERROR_CATEGORIES:
        if isinstance(exc, cls):
            return name
    return "internal"


class _Run:
    """Staged output directory with a deterministic manifest."""

    def __init__(self, out_dir: Path, command: str, config_path: Path | None,
                 settings: dict) -> None:
        self.final = out_dir
        self.command = command
        self.settings = settings
        self.config_sha = None
        if config_path is not None:
            self.config_sha = hashlib.sha256(config_path.read_bytes()).hexdigest()
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=self.final.name + ".partial.",
                                             dir=self.final.parent))
        self.t0 = time.monotonic()

    def path(self, name: str) -> Path:
        return self.staging / name

    def promote(self) -> None:
        files = sorted(p.name for p in self.staging.iterdir())
        manifest = {
            "command": self.command,
            "config_sha256": self.config_sha,
            "package_version": __version__,
            "backend": default_backend(),
            "settings": self.settings,
            "files": files,
        }
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        self.final.mkdir(parents=True, exist_ok=True)
        for p in sorted(self.staging.iterdir()):
            os.replace(p, self.final / p.name)
        self.staging.rmdir()
        with open(self.final / "timing.json", "w") as fh:
            json.dump({"started_utc": datetime.now(timezone.utc).isoformat(),
                       "wall_seconds": time.monotonic() - self.t0}, fh, indent=2)

    def abandon(self) -> None:
        shutil.rmtree(self.staging, ignore_errors=True)


def _apply_overrides(config: ExperimentConfig, args) -> dict:
    """Resolve effective run settings from config plus CLI flags."""
    prune = config.inference.prune
    if args.prune is not None:
        prune = None if args.prune == "off" else PrunePolicy.parse(args.prune)
    return {
        "seed": config.simulation.seed if args.seed is None else int(args.seed),
        "mc_samples": config.inference.mc_samples if args.mc_samples is None
        else int(args.mc_samples),
        "replicates": config.inference.replicates if args.replicates is None
        else int(args.replicates),
        "grid": config.inference.grid if args.grid is None else int(args.grid),
        "workers": 1 if args.workers is None else int(args.workers),
        "prune": prune,
    }


def _out_dir(config: ExperimentConfig, args) -> Path:
    return Path(args.out) if args.out else Path(config.output)


def _settings_payload(s: dict) -> dict:
    payload = dict(s)
    payload["prune"] = None if s["prune"] is None else f"{s['prune'].kind}:{s['prune'].value}"
    return payload


def _build_cache(config: ExperimentConfig, settings: dict) -> ConstantCache:
    return ConstantCache(config.params, n_samples=settings["mc_samples"],
                         seed=derive_seed(settings["seed"], "constants"))


def _observations(config: ExperimentConfig, args, settings) -> ObservationSet:
    if getattr(args, "obs", None):
        obs = read_observations_csv(config.params.shape, args.obs)
        return obs
    if config.observation.counts is None:
        raise ConfigError("no observation counts: provide observation.counts in "
                          "the config or pass --obs with a counts CSV")
    return ObservationSet(shape=config.params.shape,
                          times=config.observation.times,
                          sizes=config.observation.sizes,
                          counts=config.observation.counts)


def _write_grids(run: _Run, cache, mixtures, grid_n: int, prefix: str) -> None:
    shape = cache.params.shape
    if shape.alleles == (2, 2):
        for tag, mix in mixtures:
            centers, dens = density_grid(cache, mix, grid_n)
            write_density_grid_csv(centers, dens, run.path(f"{prefix}_{tag}.csv"))
    else:
        for tag, mix in mixtures:
            for l in range(shape.n_loci):
                for i in range(shape.alleles[l]):
                    centers, dens = marginal_grid(cache, mix, l, i, grid_n)
                    with open(run.path(f"{prefix}_{tag}_marginal_{l}_{i}.csv"),
                              "w", newline="") as fh:
                        fh.write("x,density\n")
                        for a, d in zip(centers, dens):
                            fh.write(f"{a!r},{d!r}\n")


def cmd_simulate(config: ExperimentConfig, args) -> int:
    settings = _apply_overrides(config, args)
    run = _Run(_out_dir(config, args), "simulate", Path(args.config),
               _settings_payload(settings))
    try:
        seed = settings["seed"]
        if config.simulation.x0 == "stationary":
            cache = _build_cache(config, settings)
            x0 = sample_stationary(cache, derive_seed(seed, "stationary"))
        else:
            x0 = validate_point(config.params.shape, config.simulation.x0)
        traj = simulate_cwf(config.params, x0, config.observation.times,
                            pop_size=config.simulation.pop_size,
                            seed=derive_seed(seed, "sim", 0))
        counts = tuple(
            sample_observation(config.params.shape, traj.states[j],
                               config.observation.sizes[j],
                               derive_seed(seed, "obs", j))
            for j in range(len(traj.times)))
        obs = ObservationSet(shape=config.params.shape, times=traj.times,
                             sizes=config.observation.sizes, counts=counts)
        write_trajectory_csv(config.params.shape, traj, run.path("trajectory.csv"))
        write_observations_csv(obs, run.path("observations.csv"))
    except BaseException:
        run.abandon()
        raise
    run.promote()
    return 0


def cmd_filter(config: ExperimentConfig, args) -> int:
    settings = _apply_overrides(config, args)
    run = _Run(_out_dir(config, args), "filter", Path(args.config),
               _settings_payload(settings))
    try:
        cache = _build_cache(config, settings)
        obs = _observations(config, args, settings)
        trace = run_filter(cache, obs, settings["replicates"], settings["seed"],
                           settings["prune"], workers=settings["workers"])
        with open(run.path("filter_trace.json"), "w") as fh:
            fh.write(trace_to_json(trace))
        write_diagnostics_csv(trace, run.path("diagnostics.csv"))
        mixtures = [(f"step{s.index}", s.filtering) for s in trace.steps]
        _write_grids(run, cache, mixtures, settings["grid"], "filter_density")
    except BaseException:
        run.abandon()
        raise
    run.promote()
    return 0


def cmd_smooth(config: ExperimentConfig, args) -> int:
    settings = _apply_overrides(config, args)
    run = _Run(_out_dir(config, args), "smooth", Path(args.config),
               _settings_payload(settings))
    try:
        cache = _build_cache(config, settings)
        obs = _observations(config, args, settings)
        runner = TransitionRunner(cache, settings["replicates"], settings["seed"],
                                  workers=settings["workers"])
        if args.filter_dir:
            trace = trace_from_json(Path(args.filter_dir, "filter_trace.json").read_text())
        else:
            trace = run_filter(cache, obs, settings["replicates"], settings["seed"],
                               settings["prune"], runner=runner)
            with open(run.path("filter_trace.json"), "w") as fh:
                fh.write(trace_to_json(trace))
        result = run_smoother(cache, obs, trace, settings["replicates"],
                              settings["seed"], settings["prune"], runner=runner)
        with open(run.path("smoothing.json"), "w") as fh:
            fh.write(smoothing_to_json(result))
        mixtures = [(f"index{e.index}", e.flattened()) for e in result.entries]
        _write_grids(run, cache, mixtures, settings["grid"], "smooth_density")
    except BaseException:
        run.abandon()
        raise
    run.promote()
    return 0


def cmd_constants(config: ExperimentConfig, args) -> int:
    settings = _apply_overrides(config, args)
    run = _Run(_out_dir(config, args), "constants", Path(args.config),
               _settings_payload(settings))
    try:
        cache = _build_cache(config, settings)
        indices = multi_indices_up_to(config.params.shape, args.max_order)
        write_constants_csv(cache, indices, run.path("constants.csv"))
    except BaseException:
        run.abandon()
        raise
    run.promote()
    return 0


def cmd_dual_transition(config: ExperimentConfig, args) -> int:
    settings = _apply_overrides(config, args)
    run = _Run(_out_dir(config, args), "dual-transition", Path(args.config),
               _settings_payload(settings))
    try:
        origin = tuple(int(v) for v in args.origin.split("-"))
        cache = _build_cache(config, settings)
        et = estimate_transition(
            cache, origin, args.dt, settings["replicates"],
            derive_seed(settings["seed"], "dual", origin, float(args.dt)))
        write_transition_csv(et, run.path("transition.csv"))
    except BaseException:
        run.abandon()
        raise
    run.promote()
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="root seed (overrides config)")
    parser.add_argument("--replicates", type=int, help="dual replicates per origin")
    parser.add_argument("--mc-samples", type=int, help="Monte Carlo sample count")
    parser.add_argument("--prune", help="prune policy 'threshold:EPS', "
                                        "'topmass:TAU' or 'off'")
    parser.add_argument("--grid", type=int, help="density grid resolution")
    parser.add_argument("--workers", type=int, help="worker threads for "
                                                    "per-origin transitions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cwfilter",
        description="Filtering and smoothing for coupled Wright-Fisher diffusions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a signal trajectory and counts")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", help="run the forward mixture filter")
    _add_common(p)
    p.add_argument("--obs", help="counts CSV from a simulate run (otherwise "
                                 "observation.counts from the config)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("smooth", help="run filter plus backward smoothing")
    _add_common(p)
    p.add_argument("--obs", help="counts CSV from a simulate run")
    p.add_argument("--filter-dir", help="reuse filter_trace.json from this "
                                        "directory instead of re-filtering")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("constants", help="export normalizing-constant estimates")
    _add_common(p)
    p.add_argument("--max-order", type=int, default=4,
                   help="largest multi-index total order to export")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("dual-transition", help="estimate one dual transition")
    _add_common(p)
    p.add_argument("--origin", required=True,
                   help="dash-joined start multi-index, e.g. 2-0-1-1")
    p.add_argument("--dt", type=float, required=True, help="time gap")
    p.set_defaults(func=cmd_dual_transition)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return args.func(config, args)
    except Exception as exc:  # surface every failure with a machine-readable tag
        print(json.dumps({"error": _error_category(exc), "message": str(exc)}),
              file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 3


if __name__ == "__main__":
    sys.exit(main())
