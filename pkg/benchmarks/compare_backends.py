"""Benchmark the two dual-process stepping lanes (numba vs pure numpy).

The lanes consume identical random streams, so besides timing them this
script asserts their outputs are bit-identical.  Typical invocation:

    python3 benchmarks/compare_backends.py --replicates 5000

The numba timing excludes JIT compilation (one warmup call per lane).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cwfilter._kernels import HAS_NUMBA
from cwfilter.constants import ConstantCache
from cwfilter.dual import StateGraph, estimate_transition
from cwfilter.model import LociShape, ModelParams


def illustration_cache(n_samples: int) -> ConstantCache:
    shape = LociShape((2, 2))
    coupling = np.zeros((4, 4))
    coupling[0, 2] = coupling[2, 0] = 0.9
    coupling[1, 3] = coupling[3, 1] = 1.8
    params = ModelParams(shape=shape, alpha=np.array([1.8, 1.4, 1.9, 1.7]),
                         sigma=np.array([0.5, 0.0, 0.0, 1.2]), coupling=coupling)
    return ConstantCache(params, n_samples=n_samples, seed=7)


def time_lane(cache, graph, backend: str, origins, dt: float, reps: int, seed: int):
    results = []
    t0 = time.perf_counter()
    for i, origin in enumerate(origins):
        results.append(estimate_transition(cache, origin, dt, reps,
                                           seed=seed + i, backend=backend,
                                           graph=graph))
    return time.perf_counter() - t0, results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replicates", type=int, default=5000)
    parser.add_argument("--mc-samples", type=int, default=50_000)
    parser.add_argument("--dt", type=float, default=0.1)
    args = parser.parse_args()

    cache = illustration_cache(args.mc_samples)
    origins = [(4, 6, 4, 6), (2, 1, 3, 0), (1, 1, 1, 1), (5, 2, 0, 4)]

    # warm everything shared first (state discovery, constants memo, JIT) so
    # the timed section isolates the stepping kernels; results do not depend
    # on graph warm-up state, which is what makes this comparison fair
    graph = StateGraph(cache)
    lanes = (["numba"] if HAS_NUMBA else []) + ["numpy"]
    for backend in lanes:
        for i, origin in enumerate(origins):
            estimate_transition(cache, origin, args.dt, args.replicates,
                                seed=1000 + i, backend=backend, graph=graph)

    rows = []
    outputs = {}
    for backend in lanes:
        wall, results = time_lane(cache, graph, backend, origins, args.dt,
                                  args.replicates, seed=1000)
        rows.append((backend, wall))
        outputs[backend] = [r.mass for r in results]

    print(f"{len(origins)} origins x {args.replicates} replicates, "
          f"dt={args.dt}, B={args.mc_samples}")
    base = rows[-1][1]
    for backend, wall in rows:
        print(f"  {backend:>6}: {wall:8.3f} s   ({base / wall:4.1f}x vs numpy)")
    if HAS_NUMBA:
        same = outputs["numba"] == outputs["numpy"]
        print(f"  lanes bit-identical: {same}")
        if not same:
            raise SystemExit(1)


if __name__ == "__main__":
    main()
