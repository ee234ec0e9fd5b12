"""Coupled Wright-Fisher model: state space, parameters, and generator coefficients.

The state lives on a product of simplices, one per locus, stored as a single
flat vector of allele frequencies.  Everything downstream (constants, dual
process, filtering) shares this flat layout: locus ``l`` occupies the slice
``shape.slice(l)`` of any state, mutation-rate, selection or multi-index
vector.

Blocks of the coupling matrix tie loci together through a quadratic fitness
potential; its gradient, premultiplied by the per-locus Wright-Fisher
covariance, yields the selection drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

SIMPLEX_ATOL = 1e-12
RENORM_ATOL = 1e-9


class ShapeError(ValueError):
    """Vector or matrix does not match the loci layout."""


class StateError(ValueError):
    """Point is not on the product of simplices (beyond renormalization reach)."""


@dataclass(frozen=True)
class LociShape:
    """Flat layout of allele coordinates across loci.

    ``alleles[l]`` is the number of types at locus ``l``; the flat dimension
    is their sum.  Offsets give the start of each locus block.
    """

    alleles: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.alleles) < 1:
            raise ShapeError("need at least one locus")
        if any(int(k) < 2 for k in self.alleles):
            raise ShapeError(f"every locus needs >= 2 alleles, got {self.alleles}")
        object.__setattr__(self, "alleles", tuple(int(k) for k in self.alleles))

    @property
    def n_loci(self) -> int:
        return len(self.alleles)

    @property
    def total(self) -> int:
        return sum(self.alleles)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for k in self.alleles:
            out.append(acc)
            acc += k
        return tuple(out)

    def slice(self, locus: int) -> slice:
        start = self.offsets[locus]
        return slice(start, start + self.alleles[locus])

    def split(self, vec: np.ndarray) -> list[np.ndarray]:
        """Views of a flat vector (or batch, last axis flat) per locus."""
        return [vec[..., self.slice(l)] for l in range(self.n_loci)]

    def locus_of(self, flat_index: int) -> int:
        for l in range(self.n_loci - 1, -1, -1):
            if flat_index >= self.offsets[l]:
                return l
        raise ShapeError(f"flat index {flat_index} out of range")


def as_multi_index(shape: LociShape, m) -> tuple[int, ...]:
    """Normalize a multi-index (flat or per-locus nested) to a flat int tuple."""
    if type(m) is tuple and len(m) == shape.total:
        # hot path: the dual process hands canonical tuples around constantly
        for v in m:
            if type(v) is not int or v < 0:
                break
        else:
            return m
    arr = np.asarray(m, dtype=object)
    if arr.dtype == object or (arr.ndim > 1):
        flat: list[int] = []
        for part in m:
            flat.extend(int(v) for v in np.atleast_1d(part))
        m = flat
    out = tuple(int(v) for v in np.asarray(m).ravel())
    if len(out) != shape.total:
        raise ShapeError(f"multi-index length {len(out)} != {shape.total}")
    if any(v < 0 for v in out):
        raise ShapeError(f"multi-index entries must be >= 0, got {out}")
    return out


def locus_totals(shape: LociShape, m) -> tuple[int, ...]:
    """Per-locus totals of a flat multi-index."""
    arr = np.asarray(m)
    return tuple(int(arr[shape.slice(l)].sum()) for l in range(shape.n_loci))


@dataclass(frozen=True)
class ModelParams:
    """Mutation, selection and coupling parameters over a loci layout.

    ``alpha``: positive mutation parameters, one per allele coordinate
    (parent-independent mutation toward type ``i`` runs at ``alpha[i] / 2``).
    ``sigma``: nonnegative single-locus selection coefficients.
    ``coupling``: symmetric nonnegative matrix of two-locus selection
    coefficients with zero diagonal blocks, flat ``total x total``.
    """

    shape: LociShape
    alpha: FloatArray
    sigma: FloatArray
    coupling: FloatArray

    def __post_init__(self) -> None:
        k = self.shape.total
        alpha = np.ascontiguousarray(np.asarray(self.alpha, dtype=np.float64))
        sigma = np.ascontiguousarray(np.asarray(self.sigma, dtype=np.float64))
        coupling = np.ascontiguousarray(np.asarray(self.coupling, dtype=np.float64))
        if alpha.shape != (k,):
            raise ShapeError(f"alpha must have shape ({k},), got {alpha.shape}")
        if sigma.shape != (k,):
            raise ShapeError(f"sigma must have shape ({k},), got {sigma.shape}")
        if coupling.shape != (k, k):
            raise ShapeError(f"coupling must have shape ({k},{k}), got {coupling.shape}")
        if not np.all(alpha > 0):
            raise ValueError("all mutation parameters must be strictly positive")
        if not np.all(sigma >= 0):
            raise ValueError("selection coefficients must be nonnegative")
        if not np.all(coupling >= 0):
            raise ValueError("coupling coefficients must be nonnegative")
        if not np.array_equal(coupling, coupling.T):
            raise ValueError("coupling matrix must be symmetric")
        for l in range(self.shape.n_loci):
            sl = self.shape.slice(l)
            if np.any(coupling[sl, sl] != 0):
                raise ValueError(f"diagonal coupling block for locus {l} must be zero")
        for name, arr in (("alpha", alpha), ("sigma", sigma), ("coupling", coupling)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def selection_active(self) -> bool:
        return bool(np.any(self.sigma != 0) or np.any(self.coupling != 0))


def validate_point(shape: LociShape, x, *, atol: float = SIMPLEX_ATOL,
                   renorm_atol: float = RENORM_ATOL) -> FloatArray:
    """Check (and mildly repair) a point on the product of simplices.

    Entries must lie in [0, 1] and each locus block must sum to 1 within
    ``atol``.  Blocks off by at most ``renorm_atol`` are renormalized (guards
    against drift accumulated during simulation); anything farther is an
    error, not silently fixed.
    """
    x = np.array(x, dtype=np.float64).ravel()
    if x.shape != (shape.total,):
        raise ShapeError(f"state must have {shape.total} entries, got {x.shape}")
    if np.any(x < -atol) or np.any(x > 1 + atol):
        raise StateError("state entries must lie in [0, 1]")
    x = np.clip(x, 0.0, 1.0)
    for l in range(shape.n_loci):
        sl = shape.slice(l)
        s = x[sl].sum()
        if abs(s - 1.0) <= atol:
            continue
        if abs(s - 1.0) <= renorm_atol:
            x[sl] /= s
        else:
            raise StateError(f"locus {l} frequencies sum to {s!r}, not 1")
    return x


def barycenter(shape: LociShape) -> FloatArray:
    """Uniform frequencies at every locus."""
    x = np.empty(shape.total)
    for l, k in enumerate(shape.alleles):
        x[shape.slice(l)] = 1.0 / k
    return x


def fitness_potential(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Quadratic fitness potential x.sigma + x.J.x / 2.

    Batch-safe: ``x`` may carry leading axes; the flat coordinate axis is
    last.  The half compensates for the symmetric coupling matrix counting
    each locus pair twice.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.shape.total:
        raise ShapeError(f"state last axis must be {params.shape.total}")
    lin = x @ params.sigma
    quad = np.einsum("...i,...i->...", x, x @ params.coupling)
    return lin + 0.5 * quad


def mutation_drift(params: ModelParams, x: np.ndarray) -> FloatArray:
    """Parent-independent mutation drift, (alpha_i - |alpha_l| x_i) / 2 per locus."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.shape.total:
        raise ShapeError(f"state last axis must be {params.shape.total}")
    out = np.empty_like(x)
    for l in range(params.shape.n_loci):
        sl = params.shape.slice(l)
        total = params.alpha[sl].sum()
        out[..., sl] = 0.5 * (params.alpha[sl] - total * x[..., sl])
    return out


def local_selection(params: ModelParams, x: np.ndarray) -> FloatArray:
    """Effective per-allele selection sigma + J x (cross-locus terms only).

    The diagonal coupling blocks are zero, so the matrix product picks up
    exactly the other-locus contributions.
    """
    x = np.asarray(x, dtype=np.float64)
    return params.sigma + x @ params.coupling


def selection_drift(params: ModelParams, x: np.ndarray) -> FloatArray:
    """Selection drift: per-locus covariance matrix applied to the effective selection.

    Component i of locus l is x_i * (s_i - sum_k x_k s_k) with s the
    effective selection at that locus.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.shape.total:
        raise ShapeError(f"state last axis must be {params.shape.total}")
    s = local_selection(params, x)
    out = np.empty_like(x)
    for l in range(params.shape.n_loci):
        sl = params.shape.slice(l)
        xl, sl_vals = x[..., sl], s[..., sl]
        avg = np.einsum("...i,...i->...", xl, sl_vals)
        out[..., sl] = xl * (sl_vals - avg[..., None])
    return out


def diffusion_matrix(shape: LociShape, x: np.ndarray, locus: int) -> FloatArray:
    """Per-locus Wright-Fisher covariance d_ij = x_i (delta_ij - x_j)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (shape.total,):
        raise ShapeError(f"state must have {shape.total} entries")
    xl = x[shape.slice(locus)]
    return np.diag(xl) - np.outer(xl, xl)


def _monomial(x: np.ndarray, exps: IntArray, cols: np.ndarray) -> np.ndarray:
    # product over the nonzero-exponent columns only; avoids 0**0 at vertices
    if cols.size == 0:
        return np.ones(x.shape[:-1])
    return np.prod(x[..., cols] ** exps[cols], axis=-1)


def apply_generator_to_monomial(params: ModelParams, exponents,
                                x: np.ndarray) -> np.ndarray:
    """Generator of the coupled diffusion applied to the monomial x**exponents.

    Closed form: first and second partials of the monomial are polynomial,
    contracted with the drift (mutation + selection) and the block-diagonal
    covariance.  Batch-safe over leading axes of ``x``.  No finite
    differences anywhere.
    """
    shape = params.shape
    n = np.asarray(as_multi_index(shape, exponents), dtype=np.int64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != shape.total:
        raise ShapeError(f"state last axis must be {shape.total}")

    drift = mutation_drift(params, x) + selection_drift(params, x)
    out = np.zeros(x.shape[:-1])

    for i in np.nonzero(n)[0]:
        e = n.copy()
        e[i] -= 1
        out += n[i] * drift[..., i] * _monomial(x, e, np.nonzero(e)[0])

    for l in range(shape.n_loci):
        sl = shape.slice(l)
        idx = range(sl.start, sl.stop)
        for i in idx:
            for j in idx:
                coeff = n[i] * (n[i] - 1) if i == j else n[i] * n[j]
                if coeff == 0:
                    continue
                e = n.copy()
                e[i] -= 1
                e[j] -= 1
                d_ij = x[..., i] * ((1.0 if i == j else 0.0) - x[..., j])
                out += 0.5 * coeff * d_ij * _monomial(x, e, np.nonzero(e)[0])
    return out
