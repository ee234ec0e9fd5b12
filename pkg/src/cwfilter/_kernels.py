"""Stepping kernel for batches of dual-process jump paths.

The jump simulation dominates the runtime of a filter run: millions of
holding-time/jump draws against a table of discovered states.  The kernel
below advances a batch of paths through that table; it exists in two lanes
with identical semantics:

* a numba lane (default), a compiled per-path loop, and
* a pure-numpy lane, the same jump-by-jump recursion vectorized over paths.

Both lanes consume the same pre-generated per-path uniform rows with the same
arithmetic, so they produce bit-identical trajectories; the env variable
``CWFILTER_BACKEND`` (``numba`` or ``numpy``) selects the lane, and
``benchmarks/compare_backends.py`` measures the gap.

Path status protocol: a path stays in the batch until it reports DONE (time
exhausted or absorbed), NEED_EXPAND (reached a state whose rate row has not
been built yet -- the driver builds it and resumes), EXHAUSTED (ran out of
pre-generated uniforms -- the driver deals a fresh row) or ABORTED (walked
past the size bound).  Two uniforms are consumed per jump attempt: one for
the holding time, one for the target choice.
"""

from __future__ import annotations

import os

import numpy as np

STATUS_ACTIVE = 0
STATUS_DONE = 1
STATUS_NEED_EXPAND = 2
STATUS_EXHAUSTED = 3
STATUS_ABORTED = 4


def advance_paths_numpy(state, remaining, cursor, status, rows, uniforms,
                        expanded, total_rate, msize, cum_prob, target,
                        size_bound) -> None:
    """Vectorized lane; mutates the path arrays in place.

    ``rows[p]`` is the row of ``uniforms`` owned by slot ``p``, so callers can
    pass the full uniform matrix without copying it per call.
    """
    ncols = uniforms.shape[1]
    alive = np.flatnonzero(status == STATUS_ACTIVE)
    while alive.size:
        s = state[alive]

        bad = msize[s] > size_bound
        status[alive[bad]] = STATUS_ABORTED
        alive, s = alive[~bad], s[~bad]

        raw = expanded[s] == 0
        status[alive[raw]] = STATUS_NEED_EXPAND
        alive, s = alive[~raw], s[~raw]

        tr = total_rate[s]
        absorbed = tr <= 0.0
        status[alive[absorbed]] = STATUS_DONE
        alive, s, tr = alive[~absorbed], s[~absorbed], tr[~absorbed]

        dry = cursor[alive] + 2 > ncols
        status[alive[dry]] = STATUS_EXHAUSTED
        alive, s, tr = alive[~dry], s[~dry], tr[~dry]
        if alive.size == 0:
            break

        c = cursor[alive]
        r = rows[alive]
        u1 = uniforms[r, c]
        u2 = uniforms[r, c + 1]
        cursor[alive] = c + 2
        with np.errstate(divide="ignore"):
            hold = -np.log(u1) / tr

        over = hold >= remaining[alive]
        ended = alive[over]
        remaining[ended] = 0.0
        status[ended] = STATUS_DONE

        alive, s, u2, hold = alive[~over], s[~over], u2[~over], hold[~over]
        remaining[alive] -= hold
        if alive.size:
            k = np.sum(u2[:, None] >= cum_prob[s], axis=1)
            state[alive] = target[s, k]


def _advance_paths_scalar(state, remaining, cursor, status, rows, uniforms,
                          expanded, total_rate, msize, cum_prob, target,
                          size_bound) -> None:
    ncols = uniforms.shape[1]
    for p in range(state.shape[0]):
        if status[p] != STATUS_ACTIVE:
            continue
        row = rows[p]
        while True:
            s = state[p]
            if msize[s] > size_bound:
                status[p] = STATUS_ABORTED
                break
            if expanded[s] == 0:
                status[p] = STATUS_NEED_EXPAND
                break
            tr = total_rate[s]
            if tr <= 0.0:
                status[p] = STATUS_DONE
                break
            c = cursor[p]
            if c + 2 > ncols:
                status[p] = STATUS_EXHAUSTED
                break
            u1 = uniforms[row, c]
            u2 = uniforms[row, c + 1]
            cursor[p] = c + 2
            if u1 <= 0.0:
                hold = np.inf
            else:
                hold = -np.log(u1) / tr
            if hold >= remaining[p]:
                remaining[p] = 0.0
                status[p] = STATUS_DONE
                break
            remaining[p] -= hold
            k = 0
            while u2 >= cum_prob[s, k]:
                k += 1
            state[p] = target[s, k]


try:  # pragma: no cover - exercised through the public dispatcher
    from numba import njit

    advance_paths_numba = njit(cache=True, nogil=True)(_advance_paths_scalar)
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    advance_paths_numba = None
    HAS_NUMBA = False


def default_backend() -> str:
    env = os.environ.get("CWFILTER_BACKEND", "").strip().lower()
    if env in ("numba", "numpy"):
        if env == "numba" and not HAS_NUMBA:
            raise RuntimeError("CWFILTER_BACKEND=numba but numba is not importable")
        return env
    return "numba" if HAS_NUMBA else "numpy"


def get_kernel(backend: str | None = None):
    """Resolve a lane name ('numba' | 'numpy' | None for the default)."""
    lane = backend or default_backend()
    if lane == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return advance_paths_numba
    if lane == "numpy":
        return advance_paths_numpy
    raise ValueError(f"unknown kernel backend {lane!r}")
