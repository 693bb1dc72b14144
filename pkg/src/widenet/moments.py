"""Moments and cumulants of the perceptron vector ``(p(x_1), ..., p(x_k))``.

Tables are keyed by exponent tuples ``r = (r_1, ..., r_k)`` and hold every
multi-index with total order between 1 and ``L``.  Conversion between the
two uses the multivariate formal power series

    sum_r lambda_r t^r / r!  =  log( sum_r mu_r t^r / r! ),     r! = prod r_i!

so ``moments_to_cumulants`` expands the logarithm and ``cumulants_to_moments``
sums over vector partitions of ``r``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .activations import Activation
from .distributions import COORDINATES, ParamDistribution, PointMass, make_rng

MAX_TOTAL_ORDER = 6
MAX_POINTS = 8
PROVENANCES = ("monte-carlo", "quadrature", "exact")
MC_BATCHES = 32


class SingularCovarianceWarning(UserWarning):
    pass


def multi_indices(k: int, max_order: int, min_order: int = 1) -> list[tuple[int, ...]]:
    """All exponent tuples of length ``k`` with total order in [min_order, max_order]."""
    out = []
    for total in range(min_order, max_order + 1):
        for combo in itertools.combinations_with_replacement(range(k), total):
            r = [0] * k
            for i in combo:
                r[i] += 1
            out.append(tuple(r))
    # deterministic order: by total order, then lexicographically descending
    return sorted(set(out), key=lambda r: (sum(r), tuple(-v for v in r)))


def index_factorial(r) -> int:
    return math.prod(math.factorial(v) for v in r)


def format_index(r) -> str:
    return "-".join(str(v) for v in r)


def parse_index(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split("-"))


@dataclass(frozen=True)
class _Table:
    points: tuple
    max_order: int
    values: dict
    std_errors: dict = field(default_factory=dict)
    provenance: str = "exact"
    batch_values: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        k = len(self.points)
        if not 1 <= k <= MAX_POINTS:
            raise ValueError(f"number of points must be in 1..{MAX_POINTS}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        expected = multi_indices(k, self.max_order)
        missing = [r for r in expected if r not in self.values]
        if missing:
            raise ValueError(f"table is missing multi-indices {missing[:3]}...")

    @property
    def k(self) -> int:
        return len(self.points)

    def __getitem__(self, r) -> float:
        r = tuple(r)
        if sum(r) == 0:
            return self._zero_order
        return self.values[r]

    def std_error(self, r) -> float:
        return self.std_errors.get(tuple(r), 0.0)

    def indices(self):
        return multi_indices(self.k, self.max_order)

    def rows(self):
        """``(multi_index, value, std_error, provenance)`` rows for CSV export."""
        return [(format_index(r), self.values[r], self.std_error(r), self.provenance)
                for r in self.indices()]


class MomentTable(_Table):
    _zero_order = 1.0


class CumulantTable(_Table):
    _zero_order = 0.0


def table_from_rows(cls, points, rows):
    """Rebuild a table from exported rows."""
    values, errors, prov = {}, {}, "exact"
    for idx, value, se, provenance in rows:
        r = parse_index(idx)
        values[r] = float(value)
        errors[r] = float(se)
        prov = provenance
    max_order = max(sum(r) for r in values)
    return cls(tuple(points), max_order, values, errors, prov)


def _validate(points, L):
    points = tuple(float(p) for p in np.atleast_1d(points))
    if L < 2 or L > MAX_TOTAL_ORDER:
        raise ValueError(f"max total order must be in 2..{MAX_TOTAL_ORDER}")
    if not 1 <= len(points) <= MAX_POINTS:
        raise ValueError(f"number of points must be in 1..{MAX_POINTS}")
    return points


def is_degenerate(dist: ParamDistribution) -> bool:
    """True when every coordinate is a point mass, so moments are exact powers."""
    return all(isinstance(dist.law(c), PointMass) for c in COORDINATES)


def _shifted_mean(v: np.ndarray) -> float:
    # exact when every sample is equal (degenerate laws)
    ref = v[0]
    return float(ref + np.mean(v - ref))


def estimate_moments_mc(dist: ParamDistribution, sigma: Activation, points, L: int,
                        samples: int, seed: int) -> MomentTable:
    """Sample means of ``prod_i p(x_i)^{r_i}`` over i.i.d. perceptrons."""
    points = _validate(points, L)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = make_rng(seed)
    w1, b1, w2, b2 = dist.sample_units(rng, samples)
    x = np.asarray(points)
    p = w2[:, None] * sigma(w1[:, None] * x + b1[:, None]) + b2[:, None]
    powers = [np.stack([p[:, i] ** e for e in range(L + 1)]) for i in range(len(points))]
    values, errors, batches = {}, {}, {}
    nb = min(MC_BATCHES, samples)
    for r in multi_indices(len(points), L):
        prod = np.ones(samples)
        for i, e in enumerate(r):
            if e:
                prod = prod * powers[i][e]
        values[r] = _shifted_mean(prod)
        errors[r] = float(np.std(prod - prod[0], ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
        batches[r] = np.array([_shifted_mean(b) for b in np.array_split(prod, nb)])
    prov = "exact" if is_degenerate(dist) else "monte-carlo"
    return MomentTable(points, L, values, errors, prov, batches)


def _binomial_mix(r, inner: dict, outer_moments) -> float:
    """E[prod (q_i + b)^{r_i}] from joint moments of q and raw moments of independent b."""
    total = 0.0
    for j in itertools.product(*(range(v + 1) for v in r)):
        coef = math.prod(math.comb(v, u) for v, u in zip(r, j))
        total += coef * inner[j] * outer_moments[sum(r) - sum(j)]
    return total


def estimate_moments_quadrature(dist: ParamDistribution, sigma: Activation, points, L: int,
                                nodes_per_dim: int = 48) -> MomentTable:
    """Tensor quadrature over (W1, b1); W2 and b2 enter through their raw moments.

    ``p = W2 s + b2`` with ``s = sigma(W1 x + b1)``, and W2, b2 are independent of
    ``s``, so ``E[prod s_i^{j_i}]`` is the only numeric integral.
    """
    points = _validate(points, L)
    xw, ww = dist.quadrature("W1", nodes_per_dim)
    xb, wb = dist.quadrature("b1", nodes_per_dim)
    W1, B1 = np.meshgrid(xw, xb, indexing="ij")
    weights = np.outer(ww, wb).ravel()
    W1, B1 = W1.ravel(), B1.ravel()
    w2m = [dist.W2.raw_moment(e) for e in range(L + 1)]
    b2m = [dist.b2.raw_moment(e) for e in range(L + 1)]
    s = [sigma(W1 * x + B1) for x in points]
    inner = {}
    for j in multi_indices(len(points), L, min_order=0):
        integrand = np.ones_like(weights)
        for i, e in enumerate(j):
            if e:
                integrand = integrand * s[i] ** e
        inner[j] = float(np.dot(weights, integrand)) * w2m[sum(j)]
    values = {r: _binomial_mix(r, inner, b2m) for r in multi_indices(len(points), L)}
    prov = "exact" if is_degenerate(dist) else "quadrature"
    return MomentTable(points, L, values, {r: 0.0 for r in values}, prov)


# ---- power series helpers -------------------------------------------------

def _series_mul(a: dict, b: dict, L: int) -> dict:
    out: dict = {}
    for ra, va in a.items():
        oa = sum(ra)
        for rb, vb in b.items():
            if oa + sum(rb) > L:
                continue
            key = tuple(x + y for x, y in zip(ra, rb))
            out[key] = out.get(key, 0.0) + va * vb
    return out


def _log_series(values: dict, k: int, L: int) -> dict:
    """Coefficients of log(1 + A) where ``A`` has coefficients ``mu_r / r!``."""
    A = {r: values[r] / index_factorial(r) for r in multi_indices(k, L)}
    result = {r: 0.0 for r in A}
    power = dict(A)
    for m in range(1, L + 1):
        sign = 1.0 if m % 2 else -1.0
        for r, v in power.items():
            result[r] += sign * v / m
        if m < L:
            power = _series_mul(power, A, L)
    return result


def _cumulants_from_values(values: dict, k: int, L: int) -> dict:
    coef = _log_series(values, k, L)
    return {r: coef[r] * index_factorial(r) for r in coef}


def moments_to_cumulants(m: MomentTable) -> CumulantTable:
    values = _cumulants_from_values(m.values, m.k, m.max_order)
    errors = {r: 0.0 for r in values}
    if m.batch_values is not None:
        nb = len(next(iter(m.batch_values.values())))
        per_batch = [_cumulants_from_values({r: v[b] for r, v in m.batch_values.items()},
                                            m.k, m.max_order) for b in range(nb)]
        for r in values:
            col = np.array([c[r] for c in per_batch])
            errors[r] = float(np.std(col, ddof=1) / math.sqrt(nb)) if nb > 1 else 0.0
    return CumulantTable(m.points, m.max_order, values, errors, m.provenance)


def vector_partitions(r):
    """Yield multisets of non-zero vectors summing to ``r`` as ``{part: multiplicity}``."""
    r = tuple(r)
    parts = [s for s in itertools.product(*(range(v + 1) for v in r)) if any(s)]
    parts.sort()

    def rec(remaining, start, chosen):
        if not any(remaining):
            yield dict(chosen)
            return
        for idx in range(start, len(parts)):
            s = parts[idx]
            if all(a <= b for a, b in zip(s, remaining)):
                chosen[s] = chosen.get(s, 0) + 1
                yield from rec(tuple(b - a for a, b in zip(s, remaining)), idx, chosen)
                chosen[s] -= 1
                if not chosen[s]:
                    del chosen[s]

    yield from rec(r, 0, {})


def cumulants_to_moments(c: CumulantTable) -> MomentTable:
    """``mu_r = r! * sum over vector partitions prod_s (lambda_s / s!)^{m_s} / m_s!``."""
    values = {}
    for r in multi_indices(c.k, c.max_order):
        total = 0.0
        for partition in vector_partitions(r):
            term = 1.0
            for s, mult in partition.items():
                term *= (c.values[s] / index_factorial(s)) ** mult / math.factorial(mult)
            total += term
        values[r] = index_factorial(r) * total
    return MomentTable(c.points, c.max_order, values, {r: 0.0 for r in values}, c.provenance)


# ---- covariance -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    values: np.ndarray
    points: tuple

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.values)

    def condition_number(self) -> float:
        ev = np.abs(self.eigenvalues())
        return float(np.inf if ev.min() == 0 else ev.max() / ev.min())


def _unit_pair(k, a, b):
    r = [0] * k
    r[a] += 1
    r[b] += 1
    return tuple(r)


def covariance(m: MomentTable, cond_limit: float = 1e12) -> CovarianceMatrix:
    """Second mixed moments ``E[p(x_a) p(x_b)]`` as a symmetric matrix."""
    k = m.k
    C = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            C[a, b] = C[b, a] = m[_unit_pair(k, a, b)]
    cov = CovarianceMatrix(C, m.points)
    if cov.condition_number() > cond_limit:
        warnings.warn("covariance matrix is numerically singular", SingularCovarianceWarning,
                      stacklevel=2)
    return cov


def covariance_matrix(values, points=None) -> CovarianceMatrix:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if points is None:
        points = tuple(range(values.shape[0]))
    return CovarianceMatrix(values, tuple(points))


def discrete_moment_table(atoms, probs, L: int) -> MomentTable:
    """Exact moments of a finitely supported law on R^k (rows of ``atoms``)."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    probs = np.asarray(probs, dtype=float)
    k = atoms.shape[1]
    values = {}
    for r in multi_indices(k, L):
        values[r] = float(np.dot(probs, np.prod(atoms ** np.array(r), axis=1)))
    return MomentTable(tuple(range(k)), L, values, {}, "exact")
