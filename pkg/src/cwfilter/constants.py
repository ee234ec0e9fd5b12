"""Monte Carlo estimation of the model's intractable constants.

Everything the recursions need reduces to the family of unnormalized
integrals

    C(m) = integral over the product simplex of x**(m + alpha - 1) * exp(2 V(x))

for integer multi-indices m: the stationary normalizer is C(0), stationary
moments are ratios C(m)/C(0), observation marginals and mixture-component
moments are ratios of C's at shifted indices.

A single cache holds one set of product-Dirichlet(alpha) proposal draws with
their fitness tilts; every estimate reuses that identical sample set (common
random numbers), so the ratios that drive the filter are far more stable than
their numerators and denominators individually.  All accumulation happens in
log space with max-subtraction.
"""

from __future__ import annotations

import csv
import threading
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .model import (
    FloatArray,
    LociShape,
    ModelParams,
    ShapeError,
    as_multi_index,
    fitness_potential,
    locus_totals,
)

DEFAULT_MC_SAMPLES = 100_000


class EstimateError(RuntimeError):
    """A Monte Carlo estimate degenerated (non-finite weights, empty support...)."""


def _log_multivariate_beta(a: np.ndarray) -> float:
    return float(np.sum(gammaln(a)) - gammaln(np.sum(a)))


class ConstantCache:
    """Shared sample set and memo table for the normalizing-constant family.

    Parameters
    ----------
    params:
        Model parameters; the proposal is the product Dirichlet(alpha).
    n_samples:
        Number of proposal draws ``B``.
    seed:
        Integer seed (or ``numpy.random.SeedSequence``); the cache is
        bit-reproducible given the same seed and parameters.
    """

    def __init__(self, params: ModelParams, n_samples: int = DEFAULT_MC_SAMPLES,
                 seed=0) -> None:
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        self.params = params
        self.n_samples = int(n_samples)
        self.seed = seed
        shape = params.shape
        self.samples: FloatArray = np.ascontiguousarray(
            sample_stationary_proposal(params, self.n_samples, seed))
        self.samples.setflags(write=False)

        with np.errstate(divide="ignore"):
            log_x = np.log(self.samples)
        # exact zeros (possible at the simplex boundary) clamp to the smallest
        # useful log: 0 * log keeps vanishing exponents inert, exp underflows
        # to zero for positive ones, and no contraction ever produces NaN
        self._log_x = np.maximum(log_x, -745.0)
        self.log_tilt: FloatArray = 2.0 * fitness_potential(params, self.samples)
        self.log_tilt.setflags(write=False)

        # converts normalized-proposal expectations back to unnormalized integrals
        self._log_prefactor = sum(
            _log_multivariate_beta(params.alpha[shape.slice(l)])
            for l in range(shape.n_loci)
        )

        # memo values: (log value, relative SE or None when not yet computed)
        self._memo: dict[tuple[int, ...], tuple[float, float | None]] = {}
        self._lock = threading.Lock()

    # ------------------------------------------------------------------ core

    def _log_terms(self, m: tuple[int, ...]) -> FloatArray:
        """Per-sample log integrand x**m * exp(2V), without the Beta prefactor.

        Accumulated column by column in a fixed order (never as a matrix
        product): the result is bit-identical however the evaluation is
        batched, which keeps memoized values independent of call patterns.
        """
        if not any(m):
            return self.log_tilt
        out = self.log_tilt.copy()
        for i, power in enumerate(m):
            if power:
                out += power * self._log_x[:, i]
        return out

    def _estimate(self, m: tuple[int, ...]) -> tuple[float, float]:
        terms = self._log_terms(m)
        top = float(np.max(terms))
        if not np.isfinite(top):
            raise EstimateError(f"all integrand weights vanished for multi-index {m}")
        w = np.exp(terms - top)
        mean_w = float(np.mean(w))
        log_value = self._log_prefactor + top + np.log(mean_w)
        if self.n_samples > 1:
            rel_se = float(np.std(w, ddof=1) / (np.sqrt(self.n_samples) * mean_w))
        else:
            rel_se = 0.0
        if not np.isfinite(log_value):
            raise EstimateError(f"degenerate estimate for multi-index {m}")
        return log_value, rel_se

    def log_value(self, m) -> float:
        """log C(m) alone; cheapest access, no standard-error pass."""
        key = as_multi_index(self.params.shape, m)
        hit = self._memo.get(key)
        if hit is not None:
            return hit[0]
        val = self._estimate(key)
        with self._lock:
            return self._memo.setdefault(key, val)[0]

    def log_normalizing_constant(self, m) -> tuple[float, float]:
        """(log C(m), relative standard error).  Memoized, thread-safe.

        Memo values are write-once: a lazy standard-error upgrade keeps the
        originally cached log value (scalar and batched reductions can differ
        in the last bits, and downstream determinism relies on whichever
        landed first staying put).
        """
        key = as_multi_index(self.params.shape, m)
        hit = self._memo.get(key)
        if hit is not None and hit[1] is not None:
            return hit
        val = self._estimate(key)
        with self._lock:
            old = self._memo.get(key)
            if old is not None:
                val = (old[0], val[1])
            self._memo[key] = val
        return val

    def _log_value_only(self, key: tuple[int, ...]) -> float:
        terms = self._log_terms(key)
        top = float(np.max(terms))
        if not np.isfinite(top):
            raise EstimateError(f"all integrand weights vanished for multi-index {key}")
        log_value = self._log_prefactor + top + np.log(np.mean(np.exp(terms - top)))
        if not np.isfinite(log_value):
            raise EstimateError(f"degenerate estimate for multi-index {key}")
        return float(log_value)

    def log_normalizing_constants(self, ms) -> np.ndarray:
        """Log C for a batch of multi-indices, deduplicated against the memo.

        Per-index evaluation shares the fixed-order contraction with the
        scalar path, so values are bit-identical regardless of how requests
        are grouped; only the memo lookups are batched.
        """
        shape = self.params.shape
        keys = [as_multi_index(shape, m) for m in ms]
        missing = sorted({k for k in keys if k not in self._memo})
        if missing:
            values = [(key, (self._log_value_only(key), None)) for key in missing]
            with self._lock:
                for key, val in values:
                    self._memo.setdefault(key, val)
        return np.array([self._memo[k][0] for k in keys])

    def normalizing_constant(self, m) -> tuple[float, float]:
        """Estimate of C(m) with its standard error."""
        log_value, rel_se = self.log_normalizing_constant(m)
        value = float(np.exp(log_value))
        return value, value * rel_se

    # ------------------------------------------------------------ derived

    def moment(self, m) -> float:
        """Stationary moment E[X**m] = C(m) / C(0)."""
        lm = self.log_value(m)
        l0 = self.log_value(np.zeros(self.params.shape.total, dtype=int))
        return float(np.exp(lm - l0))

    def combination_const(self, m, n) -> float:
        """Moment combination k(m) k(n) / k(m + n), symmetric in its arguments."""
        shape = self.params.shape
        mk = as_multi_index(shape, m)
        nk = as_multi_index(shape, n)
        sk = tuple(a + b for a, b in zip(mk, nk))
        lm = self.log_value(mk)
        ln = self.log_value(nk)
        ls = self.log_value(sk)
        l0 = self.log_value((0,) * shape.total)
        return float(np.exp(lm + ln - ls - l0))

    def obs_marginal(self, m, y, sizes: Sequence[int]) -> float:
        """Marginal probability of multinomial counts y under the m-component.

        ``sizes`` are the per-locus sample sizes; each locus block of ``y``
        must sum to its size.  Equals the multinomial coefficient times
        C(m + y) / C(m).
        """
        shape = self.params.shape
        mk = as_multi_index(shape, m)
        yk = as_multi_index(shape, y)
        sizes = [int(s) for s in sizes]
        if len(sizes) != shape.n_loci:
            raise ShapeError(f"need {shape.n_loci} per-locus sizes, got {len(sizes)}")
        if any(s < 0 for s in sizes):
            raise ValueError("sample sizes must be >= 0")
        totals = locus_totals(shape, yk)
        if list(totals) != sizes:
            raise ValueError(f"count totals {totals} disagree with sizes {tuple(sizes)}")
        yarr = np.asarray(yk, dtype=np.float64)
        log_coef = 0.0
        for l in range(shape.n_loci):
            sl = shape.slice(l)
            log_coef += gammaln(sizes[l] + 1) - np.sum(gammaln(yarr[sl] + 1))
        lmy = self.log_value(tuple(a + b for a, b in zip(mk, yk)))
        lm = self.log_value(mk)
        return float(np.exp(log_coef + lmy - lm))

    def component_mean(self, n) -> FloatArray:
        """Mean of the tilted-Dirichlet component with index offset n."""
        shape = self.params.shape
        nk = as_multi_index(shape, n)
        shifts = []
        for i in range(shape.total):
            shifted = list(nk)
            shifted[i] += 1
            shifts.append(tuple(shifted))
        logs = self.log_normalizing_constants([nk] + shifts)
        return np.exp(logs[1:] - logs[0])

    def component_density(self, n, x) -> np.ndarray:
        """Density of the component p_{alpha+n} at x (w.r.t. the simplex measure).

        Batch-safe over leading axes.  At boundary points where an exponent is
        negative the density diverges; this returns ``inf`` there rather than
        raising.
        """
        shape = self.params.shape
        nk = as_multi_index(shape, n)
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != shape.total:
            raise ShapeError(f"state last axis must be {shape.total}")
        expo = self.params.alpha + np.asarray(nk, dtype=np.float64) - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
        terms = expo * lx
        terms[..., expo == 0] = 0.0  # x**0 contributes nothing, even at x == 0
        log_dens = np.sum(terms, axis=-1) + 2.0 * fitness_potential(self.params, x)
        return np.exp(log_dens - self.log_value(nk))

    def duality_function(self, x, m) -> np.ndarray:
        """Moment-normalized monomial x**m / E[X**m].  Batch-safe in x."""
        shape = self.params.shape
        mk = np.asarray(as_multi_index(shape, m), dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        cols = np.nonzero(mk)[0]
        mono = np.prod(x[..., cols] ** mk[cols], axis=-1) if cols.size else np.ones(x.shape[:-1])
        return mono / self.moment(mk.astype(int))

    # ----------------------------------------------------------- resampling

    def stationary_log_weights(self) -> FloatArray:
        """Self-normalized log importance weights of the sample set under the
        stationary law (the fitness tilt)."""
        return self.log_tilt - logsumexp(self.log_tilt)

    def effective_sample_size(self) -> float:
        logw = self.stationary_log_weights()
        return float(np.exp(-logsumexp(2.0 * logw)))

    # ----------------------------------------------------------- diagnostics

    def ratio_rel_se(self, num, den) -> float:
        """Relative standard error of C(num)/C(den) under common random numbers.

        Delta-method with the sample covariance between the two weight
        vectors; with disjoint supports this reduces to the independent-sum
        bound, with strongly overlapping integrands it is much smaller.
        """
        tn = self._log_terms(as_multi_index(self.params.shape, num))
        td = self._log_terms(as_multi_index(self.params.shape, den))
        a = np.exp(tn - np.max(tn))
        b = np.exp(td - np.max(td))
        ma, mb = float(np.mean(a)), float(np.mean(b))
        if self.n_samples < 2 or ma == 0 or mb == 0:
            raise EstimateError("ratio standard error undefined for this sample set")
        cov = float(np.cov(a, b, ddof=1)[0, 1])
        rel_var = (np.var(a, ddof=1) / ma**2 + np.var(b, ddof=1) / mb**2
                   - 2.0 * cov / (ma * mb)) / self.n_samples
        return float(np.sqrt(max(rel_var, 0.0)))


def sample_stationary_proposal(params: ModelParams, count: int, seed) -> FloatArray:
    """``count`` iid draws from the product Dirichlet(alpha) proposal.

    Deterministic given the seed; rows are valid states of the model.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(seq)
    shape = params.shape
    cols = [rng.dirichlet(params.alpha[shape.slice(l)], size=int(count))
            for l in range(shape.n_loci)]
    return np.hstack(cols)


def write_constants_csv(cache: ConstantCache, indices: Iterable, path) -> None:
    """Export C estimates for the given multi-indices as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "C_tilde", "std_error"])
        for m in indices:
            key = as_multi_index(cache.params.shape, m)
            value, se = cache.normalizing_constant(key)
            writer.writerow(["-".join(str(v) for v in key), repr(value), repr(se)])


def multi_indices_up_to(shape: LociShape, max_total: int) -> list[tuple[int, ...]]:
    """All multi-indices with total order <= max_total, in lexicographic order."""
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], remaining: int, pos: int) -> None:
        if pos == shape.total:
            out.append(tuple(prefix))
            return
        for v in range(remaining + 1):
            rec(prefix + [v], remaining - v, pos + 1)

    rec([], max_total, 0)
    return out
