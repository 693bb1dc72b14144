"""Finite and infinite-width neural tangent kernels and the third-order kernel.

Per perceptron, the four partials are ``(W2 s'(u) x, W2 s'(u), s(u), 1)`` with
``u = W1 x + b1``, so the contribution of one unit to the kernel is

    K(z, w) = W2^2 s'(u_z) s'(u_w) (z w + 1) + s(u_z) s(u_w) + 1

and the width-n kernel is the average of K over units.  The infinite kernel
is its expectation; it does not depend on the law of b2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .activations import Activation
from .distributions import ParamDistribution, make_rng
from .network import ParamVector, TrainingSet, network_eval, unit_gradients, unit_hessians

log = logging.getLogger(__name__)

PSD_CLIP = 1e-8


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    points: np.ndarray
    values: np.ndarray
    kind: str = "finite"
    std_errors: np.ndarray | None = None
    col_points: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("finite", "infinite"):
            raise ValueError("kind must be 'finite' or 'infinite'")

    @property
    def columns(self) -> np.ndarray:
        return self.points if self.col_points is None else self.col_points

    def rows(self):
        """``(i, j, z_i, z_j, value, std_error)`` rows for CSV export."""
        se = self.std_errors if self.std_errors is not None else np.zeros_like(self.values)
        cols = self.columns
        return [(i, j, float(self.points[i]), float(cols[j]), float(self.values[i, j]),
                 float(se[i, j]))
                for i in range(self.values.shape[0]) for j in range(self.values.shape[1])]


@dataclass(frozen=True, eq=False)
class SpectralSummary:
    lambda_min: float
    spectrum: np.ndarray
    condition_number: float
    backward_error: float
    eigenvectors: np.ndarray = field(repr=False, default=None)

    @property
    def lambda_max(self) -> float:
        return float(self.spectrum[-1])


# ---- finite width -----------------------------------------------------------

def _unit_features(theta: ParamVector, sigma: Activation, x):
    x = np.asarray(x, dtype=float)
    u = theta.W1 * x[..., None] + theta.b1
    return sigma(u), sigma.deriv1(u)


def _kernel_from_features(zs, ws, s_z, d_z, s_w, d_w, weights, w2sq) -> np.ndarray:
    """Weighted sum over units of the per-unit kernel; shared by both widths."""
    inner = (d_z * (weights * w2sq)) @ d_w.T
    return inner * (np.outer(zs, ws) + 1.0) + (s_z * weights) @ s_w.T + 1.0


def _identical_units(theta: ParamVector) -> bool:
    return all(np.all(a == a[0]) for a in (theta.W1, theta.b1, theta.W2))


def ntk_finite_matrix(theta: ParamVector, sigma: Activation, zs, ws=None) -> np.ndarray:
    """Batched finite NTK on a grid; caches activations per unit and point."""
    square = ws is None
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    ws = zs if square else np.atleast_1d(np.asarray(ws, dtype=float))
    if _identical_units(theta):
        # every unit contributes the same kernel, so the average is that kernel exactly
        theta = ParamVector(theta.W1[:1], theta.b1[:1], theta.W2[:1], theta.b2[:1])
    s_z, d_z = _unit_features(theta, sigma, zs)
    s_w, d_w = (s_z, d_z) if ws is zs else _unit_features(theta, sigma, ws)
    weights = np.full(theta.n, 1.0 / theta.n)
    out = _kernel_from_features(zs, ws, s_z, d_z, s_w, d_w, weights, theta.W2 ** 2)
    return 0.5 * (out + out.T) if square else out


def ntk_finite(theta: ParamVector, sigma: Activation, z1: float, z2: float) -> float:
    return float(ntk_finite_matrix(theta, sigma, [z1], [z2])[0, 0])


def ntk_finite_kernel(theta: ParamVector, sigma: Activation, points) -> KernelMatrix:
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    return KernelMatrix(pts, ntk_finite_matrix(theta, sigma, pts), "finite")


# ---- infinite width -------------------------------------------------------

def unit_kernel(w1, b1, w2, sigma: Activation, z1: float, z2: float):
    """Single-perceptron kernel ``K(z1, z2)`` for arrays of parameters."""
    u1, u2 = w1 * z1 + b1, w1 * z2 + b1
    return (w2 ** 2 * sigma.deriv1(u1) * sigma.deriv1(u2) * (z1 * z2 + 1.0)
            + sigma(u1) * sigma(u2) + 1.0)


def ntk_infinite_estimate(dist: ParamDistribution, sigma: Activation, z1: float, z2: float,
                          samples: int, seed: int) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``K(z1, z2)``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    w1, b1, w2, _ = dist.sample_units(make_rng(seed), samples)
    vals = unit_kernel(w1, b1, w2, sigma, z1, z2)
    ref = vals[0]
    mean = float(ref + np.mean(vals - ref))
    se = float(np.std(vals, ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return mean, se


def _quadrature_features(dist: ParamDistribution, sigma: Activation, points, nodes: int):
    xw, ww = dist.quadrature("W1", nodes)
    xb, wb = dist.quadrature("b1", nodes)
    W1, B1 = (a.ravel() for a in np.meshgrid(xw, xb, indexing="ij"))
    weights = np.outer(ww, wb).ravel()
    u = W1[None, :] * np.asarray(points, dtype=float)[:, None] + B1[None, :]
    return weights, sigma(u), sigma.deriv1(u)


def ntk_infinite_quadrature_matrix(dist: ParamDistribution, sigma: Activation, zs, ws=None,
                                   nodes: int = 64) -> np.ndarray:
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    ws = zs if ws is None else np.atleast_1d(np.asarray(ws, dtype=float))
    weights, s_z, d_z = _quadrature_features(dist, sigma, zs, nodes)
    _, s_w, d_w = _quadrature_features(dist, sigma, ws, nodes)
    return _kernel_from_features(zs, ws, s_z, d_z, s_w, d_w, weights,
                                 dist.W2.raw_moment(2))


def ntk_infinite_quadrature(dist: ParamDistribution, sigma: Activation, z1: float, z2: float,
                            nodes: int = 64) -> float:
    return float(ntk_infinite_quadrature_matrix(dist, sigma, [z1], [z2], nodes)[0, 0])


def _project_psd(values: np.ndarray) -> np.ndarray:
    ev, vec = np.linalg.eigh(values)
    if -PSD_CLIP < ev.min() < 0:
        log.info("clipping eigenvalue %.3e of the infinite kernel to 0", ev.min())
        ev = np.clip(ev, 0.0, None)
        values = (vec * ev) @ vec.T
        values = 0.5 * (values + values.T)
    return values


def ntk_infinite_kernel(dist: ParamDistribution, sigma: Activation, points, method: str = "quadrature",
                        nodes: int = 64, samples: int = 200_000, seed: int = 0) -> KernelMatrix:
    """Infinite NTK assembled entry-wise on ``points``.

    ``method="quadrature"`` is deterministic and PSD by construction (positive
    weights); ``"mc"`` fills standard errors and may need the PSD projection.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    m = pts.size
    if method == "quadrature":
        values = ntk_infinite_quadrature_matrix(dist, sigma, pts, nodes=nodes)
        values = 0.5 * (values + values.T)
        return KernelMatrix(pts, values, "infinite", np.zeros_like(values))
    elif method == "mc":
        values, errors = np.empty((m, m)), np.empty((m, m))
        for i in range(m):
            for j in range(i, m):
                v, se = ntk_infinite_estimate(dist, sigma, pts[i], pts[j], samples, seed)
                values[i, j] = values[j, i] = v
                errors[i, j] = errors[j, i] = se
    else:
        raise ValueError("method must be 'quadrature' or 'mc'")
    return KernelMatrix(pts, _project_psd(values), "infinite", errors)


def ntk_infinite_cross(dist: ParamDistribution, sigma: Activation, xs, X, nodes: int = 64) -> np.ndarray:
    """Rows ``(NTK_inf(x, X_1), ..., NTK_inf(x, X_N))`` for each probe ``x``."""
    return ntk_infinite_quadrature_matrix(dist, sigma, xs, X, nodes)


def min_eigenvalue(K) -> SpectralSummary:
    values = K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("kernel matrix must be square")
    scale = max(np.max(np.abs(values)), 1e-300)
    if np.max(np.abs(values - values.T)) > 1e-12 * scale:
        raise ValueError("kernel matrix is not symmetric")
    ev, vec = np.linalg.eigh(values)
    norm = float(np.max(np.abs(ev))) if ev.size else 0.0
    cond = float(np.inf if ev[0] <= 0 else ev[-1] / ev[0])
    backward = float(values.shape[0] * np.finfo(float).eps * norm)
    return SpectralSummary(float(ev[0]), ev, cond, backward, vec)


# ---- third-order kernel -----------------------------------------------------

def third_order_kernel_vec(theta: ParamVector, sigma: Activation, z: float, w: float, vs) -> np.ndarray:
    """``K3(z, w, v)`` for every ``v`` in ``vs``."""
    vs = np.atleast_1d(np.asarray(vs, dtype=float))
    gz, gw = unit_gradients(theta, sigma, z), unit_gradients(theta, sigma, w)
    Hz, Hw = unit_hessians(theta, sigma, z), unit_hessians(theta, sigma, w)
    left = np.einsum("nij,nj->ni", Hz, gw) + np.einsum("nij,nj->ni", Hw, gz)
    gv = unit_gradients(theta, sigma, vs)
    return np.einsum("ni,mni->m", left, gv) / theta.n


def third_order_kernel(theta: ParamVector, sigma: Activation, z: float, w: float, v: float) -> float:
    return float(third_order_kernel_vec(theta, sigma, z, w, [v])[0])


def ntk_time_derivative(theta: ParamVector, sigma: Activation, data: TrainingSet,
                        z: float, w: float) -> float:
    """``-(1/sqrt n) sum_l (f(X_l) - Y_l) K3(z, w, X_l)`` under gradient flow."""
    resid = network_eval(theta, sigma, data.X) - data.Y
    k3 = third_order_kernel_vec(theta, sigma, z, w, data.X)
    return float(-np.dot(resid, k3) / math.sqrt(theta.n))


def third_order_kernel_infinite_estimate(dist: ParamDistribution, sigma: Activation, z: float,
                                         w: float, v: float, samples: int,
                                         seed: int) -> tuple[float, float]:
    """Monte Carlo diagnostic for the large-width limit of ``K3``; no rate is asserted."""
    w1, b1, w2, b2 = dist.sample_units(make_rng(seed), samples)
    theta = ParamVector(w1, b1, w2, b2)
    gz, gw = unit_gradients(theta, sigma, z), unit_gradients(theta, sigma, w)
    Hz, Hw = unit_hessians(theta, sigma, z), unit_hessians(theta, sigma, w)
    gv = unit_gradients(theta, sigma, v)
    vals = np.einsum("ni,nij,nj->n", gv, Hz, gw) + np.einsum("ni,nij,nj->n", gv, Hw, gz)
    se = float(np.std(vals, ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return float(np.mean(vals)), se
