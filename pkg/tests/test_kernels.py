"""The numba lane and the numpy lane must be interchangeable bit-for-bit."""

import pytest

from cwfilter._kernels import HAS_NUMBA, default_backend, get_kernel
from cwfilter.dual import StateGraph, estimate_transition

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("origin,dt", [
    ((1, 0, 1, 0), 0.1),
    ((4, 6, 4, 6), 0.1),
    ((2, 1, 0, 3), 0.5),
])
def test_lanes_bit_identical_with_selection(illustration_cache, origin, dt):
    a = estimate_transition(illustration_cache, origin, dt, 3000, seed=77,
                            backend="numba")
    b = estimate_transition(illustration_cache, origin, dt, 3000, seed=77,
                            backend="numpy")
    assert a.mass == b.mass
    assert a.n_aborted == b.n_aborted


@needs_numba
def test_lanes_bit_identical_neutral(neutral_cache):
    a = estimate_transition(neutral_cache, (3, 2, 1, 0), 0.4, 5000, seed=78,
                            backend="numba")
    b = estimate_transition(neutral_cache, (3, 2, 1, 0), 0.4, 5000, seed=78,
                            backend="numpy")
    assert a.mass == b.mass


@needs_numba
def test_lanes_agree_on_shared_graph(illustration_cache):
    # the same warm graph must serve both lanes
    graph = StateGraph(illustration_cache)
    a = estimate_transition(illustration_cache, (2, 0, 1, 1), 0.2, 2000, seed=79,
                            backend="numba", graph=graph)
    b = estimate_transition(illustration_cache, (2, 0, 1, 1), 0.2, 2000, seed=79,
                            backend="numpy", graph=graph)
    assert a.mass == b.mass


def test_backend_env_flag(monkeypatch):
    monkeypatch.setenv("CWFILTER_BACKEND", "numpy")
    assert default_backend() == "numpy"
    monkeypatch.delenv("CWFILTER_BACKEND")
    with pytest.raises(ValueError):
        get_kernel("something-else")
