"""Width-n one-hidden-layer network, its perceptrons and parameter gradients."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .activations import Activation
from .distributions import ParamDistribution, make_rng

DEFAULT_INTERVAL = (-1.0, 1.0)


class InputOutsideInterval(UserWarning):
    pass


def check_inputs(x, interval=DEFAULT_INTERVAL) -> None:
    """Warn (never raise) when an input leaves the configured interval."""
    x = np.asarray(x, dtype=float)
    lo, hi = interval
    if x.size and (np.min(x) < lo or np.max(x) > hi):
        warnings.warn(f"inputs outside [{lo}, {hi}]", InputOutsideInterval, stacklevel=3)


@dataclass(frozen=True, eq=False)
class ParamVector:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        arrays = [np.array(a, dtype=float).reshape(-1) for a in (self.W1, self.b1, self.W2, self.b2)]
        sizes = {a.size for a in arrays}
        if len(sizes) != 1 or arrays[0].size < 1:
            raise ValueError("W1, b1, W2, b2 must share one length n >= 1")
        for name, a in zip(("W1", "b1", "W2", "b2"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return self.W1.size

    def flat(self) -> np.ndarray:
        """Concatenated ``[W1, b1, W2, b2]`` (block layout, length 4n)."""
        return np.concatenate([self.W1, self.b1, self.W2, self.b2])

    @classmethod
    def from_flat(cls, theta) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        if theta.size % 4:
            raise ValueError("flat parameter length must be a multiple of 4")
        return cls(*np.split(theta, 4))

    def scaled(self, factor: float) -> "ParamVector":
        return ParamVector.from_flat(factor * self.flat())

    def __eq__(self, other):
        return isinstance(other, ParamVector) and np.array_equal(self.flat(), other.flat())


@dataclass(frozen=True, eq=False)
class TrainingSet:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float).reshape(-1)
        Y = np.array(self.Y, dtype=float).reshape(-1)
        if X.size < 1 or X.size != Y.size:
            raise ValueError("training set needs N >= 1 inputs with matching labels")
        if np.unique(X).size != X.size:
            raise ValueError("training inputs must be pairwise distinct")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self) -> int:
        return self.X.size


def perceptron_eval(theta_hat, sigma: Activation, x):
    w1, b1, w2, b2 = theta_hat
    return w2 * sigma(w1 * x + b1) + b2


def _units(theta: ParamVector, sigma: Activation, x):
    """Per-unit outputs, shape ``x.shape + (n,)``."""
    x = np.asarray(x, dtype=float)[..., None]
    return theta.W2 * sigma(theta.W1 * x + theta.b1) + theta.b2


def network_eval(theta: ParamVector, sigma: Activation, x):
    """(1/sqrt n) times the pairwise-summed perceptron outputs; ``x`` may be an array."""
    return np.sum(_units(theta, sigma, x), axis=-1) / np.sqrt(theta.n)


def param_gradient(theta: ParamVector, sigma: Activation, x) -> np.ndarray:
    """df/dtheta in the ``ParamVector.flat`` layout.

    For array ``x`` of shape ``(m,)`` the result has shape ``(m, 4n)``.
    """
    xa = np.asarray(x, dtype=float)
    xs = xa[..., None]
    u = theta.W1 * xs + theta.b1
    d1 = sigma.deriv1(u)
    g_b1 = theta.W2 * d1
    g_w1 = g_b1 * xs
    g_w2 = sigma(u)
    g_b2 = np.ones_like(u)
    grad = np.concatenate([g_w1, g_b1, g_w2, g_b2], axis=-1)
    return grad / np.sqrt(theta.n)


def unit_gradients(theta: ParamVector, sigma: Activation, x) -> np.ndarray:
    """Unscaled per-perceptron gradients, shape ``x.shape + (n, 4)``."""
    xs = np.asarray(x, dtype=float)[..., None]
    u = theta.W1 * xs + theta.b1
    g_b1 = theta.W2 * sigma.deriv1(u)
    return np.stack([g_b1 * xs, g_b1, sigma(u), np.ones_like(u)], axis=-1)


def unit_hessians(theta: ParamVector, sigma: Activation, x) -> np.ndarray:
    """Per-perceptron 4x4 second-derivative blocks in order (W1, b1, W2, b2).

    Shape ``x.shape + (n, 4, 4)``; the b2 row and column vanish.
    """
    xs = np.asarray(x, dtype=float)[..., None]
    u = theta.W1 * xs + theta.b1
    d1 = sigma.deriv1(u)
    w2d2 = theta.W2 * sigma.deriv2(u)
    H = np.zeros(u.shape + (4, 4))
    H[..., 0, 0] = w2d2 * xs * xs
    H[..., 0, 1] = H[..., 1, 0] = w2d2 * xs
    H[..., 0, 2] = H[..., 2, 0] = d1 * xs
    H[..., 1, 1] = w2d2
    H[..., 1, 2] = H[..., 2, 1] = d1
    return H


def sample_params(dist: ParamDistribution, n: int, seed: int) -> ParamVector:
    if n < 1:
        raise ValueError("width n must be >= 1")
    rng = make_rng(seed)
    return ParamVector(*dist.sample_units(rng, n))


def sample_param_batch(dist: ParamDistribution, n: int, seeds) -> list[ParamVector]:
    return [sample_params(dist, n, s) for s in seeds]
