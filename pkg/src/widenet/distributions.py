"""Per-coordinate parameter laws and the four-coordinate initialization.

Every unit of a network draws ``(W1, b1, W2, b2)`` independently from four
scalar laws.  Each scalar law knows how to sample itself, its raw moments up
to order 6, and (when one exists) a classical quadrature rule, which is what
the deterministic moment and kernel estimators integrate against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import gammaln, roots_genlaguerre

MAX_MOMENT_ORDER = 6
COORDINATES = ("W1", "b1", "W2", "b2")


class QuadratureUnsupported(ValueError):
    """Raised when a coordinate law has no quadrature rule."""


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by an integer or a sequence of integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _binom(n: int, k: int) -> int:
    return math.comb(n, k)


class ScalarLaw:
    """Base class; subclasses fill in sampling, moments and quadrature."""

    symmetric: bool = False

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        raise NotImplementedError

    def raw_moment(self, k: int) -> float:
        raise NotImplementedError

    def quadrature(self, nodes: int) -> tuple[np.ndarray, np.ndarray]:
        raise QuadratureUnsupported(f"{type(self).__name__} has no quadrature rule")

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    def moments(self, order: int = MAX_MOMENT_ORDER) -> np.ndarray:
        return np.array([self.raw_moment(k) for k in range(order + 1)])

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PointMass(ScalarLaw):
    value: float = 0.0

    @property
    def symmetric(self):
        return self.value == 0.0

    def sample(self, rng, size):
        return np.full(size, float(self.value))

    def raw_moment(self, k):
        return float(self.value) ** k

    def quadrature(self, nodes):
        return np.array([float(self.value)]), np.array([1.0])

    def to_dict(self):
        return {"kind": "point", "value": self.value}


@dataclass(frozen=True)
class Uniform(ScalarLaw):
    low: float = -0.5
    high: float = 0.5

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("uniform law needs high > low")

    @property
    def symmetric(self):
        return self.low == -self.high

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    def raw_moment(self, k):
        a, b = self.low, self.high
        return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))

    def quadrature(self, nodes):
        x, w = leggauss(nodes)
        half = 0.5 * (self.high - self.low)
        mid = 0.5 * (self.high + self.low)
        return mid + half * x, 0.5 * w

    def to_dict(self):
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class Normal(ScalarLaw):
    mean_: float = 0.0
    std: float = 1.0

    @property
    def symmetric(self):
        return self.mean_ == 0.0

    def sample(self, rng, size):
        return self.mean_ + self.std * rng.standard_normal(size)

    def raw_moment(self, k):
        m, s = self.mean_, self.std
        total = 0.0
        for j in range(0, k + 1, 2):
            # (j-1)!! for the central Gaussian moment
            dfact = math.prod(range(j - 1, 0, -2)) if j > 0 else 1
            total += _binom(k, j) * m ** (k - j) * s ** j * dfact
        return total

    def quadrature(self, nodes):
        x, w = hermegauss(nodes)
        return self.mean_ + self.std * x, w / math.sqrt(2.0 * math.pi)

    def to_dict(self):
        return {"kind": "normal", "mean": self.mean_, "std": self.std}


@dataclass(frozen=True)
class CenteredGamma(ScalarLaw):
    """``sign * scale * (G - shape)`` with ``G ~ Gamma(shape, 1)``; mean zero, skewed."""

    shape: float = 1.0
    scale: float = 1.0
    sign: int = 1

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0 or self.sign not in (1, -1):
            raise ValueError("centered gamma needs shape > 0, scale > 0, sign = +-1")

    def sample(self, rng, size):
        g = rng.standard_gamma(self.shape, size)
        return self.sign * self.scale * (g - self.shape)

    def _gamma_raw(self, j):
        return math.exp(gammaln(self.shape + j) - gammaln(self.shape))

    def raw_moment(self, k):
        if k == 1:
            return 0.0  # centered by construction; the sum below leaves roundoff
        a = self.shape
        central = sum(_binom(k, j) * self._gamma_raw(j) * (-a) ** (k - j) for j in range(k + 1))
        return (self.sign * self.scale) ** k * central

    def quadrature(self, nodes):
        x, w = roots_genlaguerre(nodes, self.shape - 1.0)
        w = w / math.exp(gammaln(self.shape))
        return self.sign * self.scale * (x - self.shape), w

    def to_dict(self):
        return {"kind": "centered_gamma", "shape": self.shape, "scale": self.scale,
                "sign": self.sign}


@dataclass(frozen=True)
class Discrete(ScalarLaw):
    values: tuple = (-1.0, 1.0)
    probs: tuple = (0.5, 0.5)

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("discrete law needs matching, non-empty values/probs")
        if abs(sum(self.probs) - 1.0) > 1e-12 or min(self.probs) < 0:
            raise ValueError("discrete probabilities must be non-negative and sum to 1")

    @property
    def symmetric(self):
        pairs = sorted(zip(self.values, self.probs))
        mirrored = sorted((-v, p) for v, p in pairs)
        return all(abs(a[0] - b[0]) < 1e-15 and abs(a[1] - b[1]) < 1e-15
                   for a, b in zip(pairs, mirrored))

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.values, float), size=size, p=np.asarray(self.probs))

    def raw_moment(self, k):
        return float(sum(p * v ** k for v, p in zip(self.values, self.probs)))

    def quadrature(self, nodes):
        return np.asarray(self.values, float), np.asarray(self.probs, float)

    def to_dict(self):
        return {"kind": "discrete", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class Custom(ScalarLaw):
    """User-supplied sampler with declared raw moments; no quadrature rule."""

    sampler: Callable = field(compare=False)
    declared_moments: tuple = (1.0, 0.0)
    is_symmetric: bool = False

    @property
    def symmetric(self):
        return self.is_symmetric

    def sample(self, rng, size):
        return np.asarray(self.sampler(rng, size), dtype=float)

    def raw_moment(self, k):
        if k >= len(self.declared_moments):
            raise ValueError(f"moment of order {k} was not declared")
        return float(self.declared_moments[k])

    def to_dict(self):
        return {"kind": "custom"}


def law_from_dict(spec: dict) -> ScalarLaw:
    """Build a scalar law from a config table such as ``{kind = "normal", std = 1}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "point":
        return PointMass(float(spec.get("value", 0.0)))
    if kind == "uniform":
        return Uniform(float(spec.get("low", -0.5)), float(spec.get("high", 0.5)))
    if kind == "normal":
        return Normal(float(spec.get("mean", 0.0)), float(spec.get("std", 1.0)))
    if kind == "centered_gamma":
        return CenteredGamma(float(spec["shape"]), float(spec.get("scale", 1.0)),
                             int(spec.get("sign", 1)))
    if kind == "discrete":
        return Discrete(tuple(float(v) for v in spec["values"]),
                        tuple(float(p) for p in spec["probs"]))
    raise ValueError(f"unknown law kind {kind!r}")


@dataclass(frozen=True)
class ParamDistribution:
    """Independent laws for the four coordinates of one unit."""

    W1: ScalarLaw
    b1: ScalarLaw
    W2: ScalarLaw
    b2: ScalarLaw

    @classmethod
    def iid(cls, law: ScalarLaw) -> "ParamDistribution":
        return cls(law, law, law, law)

    @classmethod
    def from_dict(cls, spec: dict) -> "ParamDistribution":
        if "all" in spec:
            base = law_from_dict(spec["all"])
            laws = {c: law_from_dict(spec[c]) if c in spec else base for c in COORDINATES}
        else:
            missing = [c for c in COORDINATES if c not in spec]
            if missing:
                raise ValueError(f"distribution is missing coordinates {missing}")
            laws = {c: law_from_dict(spec[c]) for c in COORDINATES}
        return cls(**laws)

    def to_dict(self) -> dict:
        return {c: self.law(c).to_dict() for c in COORDINATES}

    def law(self, coordinate: str) -> ScalarLaw:
        return getattr(self, coordinate)

    @property
    def outer_zero_mean(self) -> bool:
        return self.W2.raw_moment(1) == 0.0 and self.b2.raw_moment(1) == 0.0

    @property
    def outer_symmetric(self) -> bool:
        return bool(self.W2.symmetric and self.b2.symmetric)

    def moments(self, order: int = MAX_MOMENT_ORDER) -> dict[str, np.ndarray]:
        return {c: self.law(c).moments(order) for c in COORDINATES}

    def sample_units(self, rng: np.random.Generator, shape) -> tuple[np.ndarray, ...]:
        """Draw ``(W1, b1, W2, b2)`` arrays of the given shape."""
        return tuple(self.law(c).sample(rng, shape) for c in COORDINATES)

    def quadrature(self, coordinate: str, nodes: int):
        try:
            return self.law(coordinate).quadrature(nodes)
        except QuadratureUnsupported as exc:
            raise QuadratureUnsupported(f"coordinate {coordinate}: {exc}") from None


def standard_normal() -> ParamDistribution:
    return ParamDistribution.iid(Normal(0.0, 1.0))


def uniform_half() -> ParamDistribution:
    """All four coordinates uniform on [-1/2, 1/2]."""
    return ParamDistribution.iid(Uniform(-0.5, 0.5))


def point_mass(values: Sequence[float]) -> ParamDistribution:
    w1, b1, w2, b2 = values
    return ParamDistribution(PointMass(w1), PointMass(b1), PointMass(w2), PointMass(b2))
