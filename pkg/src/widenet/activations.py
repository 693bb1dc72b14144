"""Activation functions with analytic first and second derivatives.

The training results assume linear growth of the activation and bounded
first and second derivatives::

    |sigma(z)| <= C (|z| + 1),    |sigma'(z)| + |sigma''(z)| <= C

``growth_constant`` is a valid ``C`` for each built-in.  ReLU is shipped for
evaluation only; its second derivative is a Dirac mass, so it is flagged with
``bounded_derivatives=False`` and rejected by the training code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Activation:
    name: str
    eval: ArrayFn
    deriv1: ArrayFn
    deriv2: ArrayFn
    growth_constant: float
    bounded_derivatives: bool = True

    def __call__(self, z):
        return self.eval(z)

    def check_bounds(self, z) -> bool:
        """True when the growth/derivative bounds hold at every point of ``z``."""
        z = np.asarray(z, dtype=float)
        c = self.growth_constant
        ok_growth = np.all(np.abs(self.eval(z)) <= c * (np.abs(z) + 1.0))
        ok_deriv = np.all(np.abs(self.deriv1(z)) + np.abs(self.deriv2(z)) <= c)
        return bool(ok_growth and ok_deriv)


def _tanh_d1(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _tanh_d2(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


def _sigmoid_d1(z):
    s = expit(z)
    return s * (1.0 - s)


def _sigmoid_d2(z):
    s = expit(z)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_d2(z):
    s = expit(z)
    return s * (1.0 - s)


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_d1(z):
    return (np.asarray(z) > 0).astype(float)


def _zeros(z):
    return np.zeros_like(np.asarray(z, dtype=float))


def _identity(z):
    return np.asarray(z, dtype=float)


def _ones(z):
    return np.ones_like(np.asarray(z, dtype=float))


TANH = Activation("tanh", np.tanh, _tanh_d1, _tanh_d2, growth_constant=2.0)
SIGMOID = Activation("sigmoid", expit, _sigmoid_d1, _sigmoid_d2, growth_constant=1.0)
SOFTPLUS = Activation("softplus", _softplus, expit, _softplus_d2, growth_constant=2.0)
RELU = Activation("relu", _relu, _relu_d1, _zeros, growth_constant=1.0,
                  bounded_derivatives=False)
# polynomial, so excluded from the NTK positivity results; used as a test stub
IDENTITY = Activation("identity", _identity, _ones, _zeros, growth_constant=1.0)

ACTIVATIONS = {a.name: a for a in (TANH, SIGMOID, SOFTPLUS, RELU, IDENTITY)}
ACTIVATIONS["logistic"] = SIGMOID


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None
