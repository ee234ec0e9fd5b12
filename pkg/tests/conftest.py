import numpy as np
import pytest

from cwfilter.constants import ConstantCache
from cwfilter.model import LociShape, ModelParams


def make_params(alleles=(2, 2), alpha=None, sigma=None, blocks=None) -> ModelParams:
    shape = LociShape(tuple(alleles))
    k = shape.total
    alpha = np.ones(k) if alpha is None else np.asarray(alpha, dtype=float)
    sigma = np.zeros(k) if sigma is None else np.asarray(sigma, dtype=float)
    coupling = np.zeros((k, k))
    for (l, r), block in (blocks or {}).items():
        sl, sr = shape.slice(l), shape.slice(r)
        block = np.asarray(block, dtype=float)
        coupling[sl, sr] = block
        coupling[sr, sl] = block.T
    return ModelParams(shape=shape, alpha=alpha, sigma=sigma, coupling=coupling)


def illustration_params() -> ModelParams:
    """Two loci, two alleles each, with both selection routes active."""
    return make_params(
        alleles=(2, 2),
        alpha=(1.8, 1.4, 1.9, 1.7),
        sigma=(0.5, 0.0, 0.0, 1.2),
        blocks={(0, 1): [[0.9, 0.0], [0.0, 1.8]]},
    )


@pytest.fixture(scope="session")
def neutral_cache() -> ConstantCache:
    """Selection-free uniform-mutation cache shared across tests."""
    return ConstantCache(make_params(), n_samples=50_000, seed=2001)


@pytest.fixture(scope="session")
def illustration_cache() -> ConstantCache:
    return ConstantCache(illustration_params(), n_samples=50_000, seed=2002)


def random_simplex_points(shape: LociShape, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cols = [rng.dirichlet(np.ones(k), size=count) for k in shape.alleles]
    return np.hstack(cols)


def random_params(rng: np.random.Generator, alleles=(2, 2)) -> ModelParams:
    shape = LociShape(tuple(alleles))
    k = shape.total
    alpha = rng.uniform(0.3, 3.0, size=k)
    sigma = rng.uniform(0.0, 2.0, size=k)
    coupling = np.zeros((k, k))
    for l in range(shape.n_loci):
        for r in range(l + 1, shape.n_loci):
            block = rng.uniform(0.0, 2.0, size=(shape.alleles[l], shape.alleles[r]))
            coupling[shape.slice(l), shape.slice(r)] = block
            coupling[shape.slice(r), shape.slice(l)] = block.T
    return ModelParams(shape=shape, alpha=alpha, sigma=sigma, coupling=coupling)
