"""Gradient-flow training at finite width and the closed-form infinite-width flow."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .activations import Activation
from .distributions import ParamDistribution
from .network import ParamVector, TrainingSet, network_eval, param_gradient
from .ntk import min_eigenvalue, ntk_infinite_quadrature_matrix

DEFAULT_METHOD = "DOP853"


class IntegratorError(RuntimeError):
    """Adaptive integration aborted (step size collapsed)."""


def loss(theta: ParamVector, sigma: Activation, data: TrainingSet) -> float:
    r = data.Y - network_eval(theta, sigma, data.X)
    return 0.5 * float(np.dot(r, r))


def _require_smooth(sigma: Activation):
    if not sigma.bounded_derivatives:
        raise ValueError(f"activation {sigma.name!r} lacks a bounded second derivative")


# ---- finite width ------------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    """Gradient-flow solution with dense output.

    ``thetas[i]`` is the flat parameter vector at ``times[i]``; ``outputs[i]``
    holds the network values at the training inputs.
    """

    times: np.ndarray
    thetas: np.ndarray
    outputs: np.ndarray
    sigma: Activation
    data: TrainingSet
    dense: Callable = field(repr=False)
    steps: int = 0
    evaluations: int = 0
    tolerance: float = 0.0
    method: str = DEFAULT_METHOD

    @property
    def n(self) -> int:
        return self.thetas.shape[1] // 4

    def theta_at(self, t: float) -> ParamVector:
        return ParamVector.from_flat(self.dense(t))

    def outputs_at(self, t: float, xs) -> np.ndarray:
        return network_eval(self.theta_at(t), self.sigma, xs)

    def probe_outputs(self, xs) -> np.ndarray:
        """``f_{theta(t)}(x)`` for every stored ``t``; shape ``(T, len(xs))``."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        return np.stack([network_eval(ParamVector.from_flat(th), self.sigma, xs)
                         for th in self.thetas])

    def losses(self) -> np.ndarray:
        r = self.outputs - self.data.Y
        return 0.5 * np.sum(r * r, axis=1)

    def max_residuals(self) -> np.ndarray:
        return np.max(np.abs(self.outputs - self.data.Y), axis=1)


def flow_rhs(theta_flat: np.ndarray, sigma: Activation, data: TrainingSet) -> np.ndarray:
    """``-grad L = -sum_l (f(X_l) - Y_l) df(X_l)/dtheta``."""
    theta = ParamVector.from_flat(theta_flat)
    G = param_gradient(theta, sigma, data.X)
    r = network_eval(theta, sigma, data.X) - data.Y
    return -(r @ G)


def _solve(rhs, y0, t_end, tolerance, t_eval, method, n=1):
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    # outputs sum 4n parameter errors with weight 1/sqrt(n); scale so outputs meet the tolerance
    sol = solve_ivp(rhs, (0.0, t_end), y0, method=method, t_eval=t_eval, dense_output=True,
                    rtol=tolerance, atol=tolerance / math.sqrt(n))
    if sol.status != 0:
        raise IntegratorError(f"integration aborted at t={sol.t[-1]:.6g}: {sol.message} "
                              "(step size collapsed; the flow may be stiff here)")
    return sol


def integrate_gradient_flow(theta0: ParamVector, sigma: Activation, data: TrainingSet,
                            t_end: float, tolerance: float = 1e-9, t_eval=None,
                            method: str = DEFAULT_METHOD) -> Trajectory:
    """Adaptive explicit Runge-Kutta integration of the gradient flow."""
    _require_smooth(sigma)
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
    sol = _solve(lambda t, y: flow_rhs(y, sigma, data), theta0.flat(), t_end, tolerance,
                 t_eval, method, theta0.n)
    thetas = sol.y.T.copy()
    outputs = np.stack([network_eval(ParamVector.from_flat(th), sigma, data.X) for th in thetas])
    return Trajectory(sol.t.copy(), thetas, outputs, sigma, data, sol.sol,
                      steps=len(sol.sol.ts) - 1, evaluations=int(sol.nfev),
                      tolerance=tolerance, method=method)


def _batch_rhs(state, S, n, sigma, X, Y):
    P = state.reshape(S, 4, n)
    W1, b1, W2 = P[:, 0, None, :], P[:, 1, None, :], P[:, 2, None, :]
    x = X[None, :, None]
    u = W1 * x + b1
    s, d1 = sigma(u), sigma.deriv1(u)
    f = (np.sum(W2 * s, axis=-1) + np.sum(P[:, 3, :], axis=-1)[:, None]) / math.sqrt(n)
    r = (f - Y[None, :])[:, :, None]
    g_b1 = -np.sum(r * W2 * d1, axis=1)
    g_w1 = -np.sum(r * W2 * d1 * x, axis=1)
    g_w2 = -np.sum(r * s, axis=1)
    g_b2 = -np.broadcast_to(np.sum(r, axis=1), (S, n))
    return (np.stack([g_w1, g_b1, g_w2, g_b2], axis=1) / math.sqrt(n)).ravel()


@dataclass(eq=False)
class EnsembleTrajectory:
    """Several same-width networks trained on one dataset in a single solve."""

    times: np.ndarray
    states: np.ndarray  # (T, S, 4n)
    sigma: Activation
    data: TrainingSet

    def member(self, s: int) -> list[ParamVector]:
        return [ParamVector.from_flat(th) for th in self.states[:, s]]

    def probe_outputs(self, xs) -> np.ndarray:
        """Shape ``(T, S, len(xs))``."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        T, S, _ = self.states.shape
        out = np.empty((T, S, xs.size))
        for i in range(T):
            for s in range(S):
                out[i, s] = network_eval(ParamVector.from_flat(self.states[i, s]), self.sigma, xs)
        return out


def integrate_ensemble(thetas: list[ParamVector], sigma: Activation, data: TrainingSet,
                       t_end: float, t_eval, tolerance: float = 1e-8,
                       method: str = DEFAULT_METHOD) -> EnsembleTrajectory:
    _require_smooth(sigma)
    n = thetas[0].n
    if any(th.n != n for th in thetas):
        raise ValueError("ensemble members must share one width")
    S = len(thetas)
    y0 = np.concatenate([th.flat() for th in thetas])
    sol = _solve(lambda t, y: _batch_rhs(y, S, n, sigma, data.X, data.Y), y0, t_end,
                 tolerance, np.asarray(t_eval, dtype=float), method, n)
    states = sol.y.T.reshape(len(sol.t), S, 4 * n)
    return EnsembleTrajectory(sol.t.copy(), states, sigma, data)


# ---- infinite width -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearFlow:
    """Output dynamics driven by the constant infinite kernel ``K`` on the training set."""

    K: np.ndarray
    Y: np.ndarray
    y0: np.ndarray
    cross: Callable[[np.ndarray], np.ndarray] | None = None
    eigenvalues: np.ndarray = field(init=False, repr=False)
    eigenvectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        spec = min_eigenvalue(K)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float).reshape(-1))
        object.__setattr__(self, "y0", np.asarray(self.y0, dtype=float).reshape(-1))
        object.__setattr__(self, "eigenvalues", spec.spectrum)
        object.__setattr__(self, "eigenvectors", spec.eigenvectors)

    @property
    def N(self) -> int:
        return self.K.shape[0]

    @property
    def lambda_inf(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def require_invertible(self):
        if self.lambda_inf <= 0 or self.lambda_max / self.lambda_inf > 1e14:
            raise np.linalg.LinAlgError("infinite kernel on the training set is singular")

    def exp_minus(self, t: float) -> np.ndarray:
        """``e^{-K t}``."""
        V, lam = self.eigenvectors, self.eigenvalues
        return (V * np.exp(-lam * t)) @ V.T

    def resolvent_factor(self, t: float) -> np.ndarray:
        """``K^{-1} (e^{-K t} - 1)`` without forming the inverse."""
        self.require_invertible()
        V, lam = self.eigenvectors, self.eigenvalues
        return (V * (np.expm1(-lam * t) / lam)) @ V.T

    def inverse(self) -> np.ndarray:
        self.require_invertible()
        V, lam = self.eigenvectors, self.eigenvalues
        return (V / lam) @ V.T

    def cross_rows(self, xs) -> np.ndarray:
        if self.cross is None:
            raise ValueError("this flow has no cross-kernel function")
        return np.atleast_2d(self.cross(np.atleast_1d(np.asarray(xs, dtype=float))))


def linear_flow(dist: ParamDistribution, sigma: Activation, data: TrainingSet, y0,
                nodes: int = 64) -> LinearFlow:
    """Build the flow from the quadrature infinite kernel."""
    K = ntk_infinite_quadrature_matrix(dist, sigma, data.X, nodes=nodes)
    K = 0.5 * (K + K.T)

    def cross(xs):
        return ntk_infinite_quadrature_matrix(dist, sigma, xs, data.X, nodes)

    return LinearFlow(K, data.Y, y0, cross)


def linear_flow_training_outputs(flow: LinearFlow, t: float) -> np.ndarray:
    return flow.Y + flow.exp_minus(t) @ (flow.y0 - flow.Y)


def linear_flow_general(flow: LinearFlow, x, y0_x, t: float):
    rows = flow.cross_rows(x)
    out = np.asarray(y0_x, dtype=float) + rows @ (flow.resolvent_factor(t) @ (flow.y0 - flow.Y))
    return out if np.ndim(x) else float(out[0])


def limit_prediction(flow: LinearFlow, x, y0_x):
    rows = flow.cross_rows(x)
    out = np.asarray(y0_x, dtype=float) - rows @ (flow.inverse() @ (flow.y0 - flow.Y))
    return out if np.ndim(x) else float(out[0])


# ---- comparison ---------------------------------------------------------------

def fit_decay_rate(times, values, floor: float = 1e-13) -> float:
    """Rate ``r`` of a least-squares fit ``values ~ C e^{-r t}``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > floor
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(times[keep], np.log(values[keep]), 1)
    return float(-slope)


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``; nan with fewer than two points
    or any non-positive value."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 2 or np.any(xs <= 0) or np.any(ys <= 0):
        return float("nan")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


@dataclass(eq=False)
class DeviationReport:
    times: np.ndarray
    probes: np.ndarray
    deviations: np.ndarray        # (T, P): |f_n(x, t) - f_inf(x, t)|
    residuals: np.ndarray         # (T, N): |f_n(X_i, t) - Y_i|
    losses: np.ndarray
    fitted_rate: float
    corollary_rate: float
    lambda_inf: float
    lambda_max: float

    @property
    def sup_per_time(self) -> np.ndarray:
        return np.max(self.deviations, axis=1)

    @property
    def sup_dev(self) -> float:
        return float(np.max(self.deviations))

    @property
    def max_residuals(self) -> np.ndarray:
        return np.max(self.residuals, axis=1)


def infinite_outputs(flow: LinearFlow, probes, y0_probes, times) -> np.ndarray:
    """``f_inf(x, t)`` for every time and probe; shape ``(T, P)``."""
    rows = flow.cross_rows(probes)
    r0 = flow.y0 - flow.Y
    return np.stack([y0_probes + rows @ (flow.resolvent_factor(t) @ r0) for t in times])


def compare_outputs(finite_probe: np.ndarray, finite_train: np.ndarray, flow: LinearFlow,
                    probes, times, window=None) -> DeviationReport:
    """Deviation report from precomputed finite-width outputs.

    ``finite_probe`` is ``(T, P)`` at ``probes``; ``finite_train`` is ``(T, N)``.
    Rates are fitted over ``window`` (default ``[1/lambda_inf, 8/lambda_inf]``).
    """
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0:
        raise ValueError("the time grid must start at 0")
    probes = np.atleast_1d(np.asarray(probes, dtype=float))
    f_inf = infinite_outputs(flow, probes, finite_probe[0], times)
    dev = np.abs(finite_probe - f_inf)
    resid = np.abs(finite_train - flow.Y)
    losses = 0.5 * np.sum(resid ** 2, axis=1)
    lam = flow.lambda_inf
    lo, hi = window if window is not None else (1.0 / lam, 8.0 / lam)
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    rate = fit_decay_rate(times[sel], np.max(resid[sel], axis=1))
    # distance to the final state, excluding the last few samples where it vanishes
    tail = np.max(np.abs(finite_probe - finite_probe[-1]), axis=1)
    sel_c = sel & (times <= 0.75 * times[-1])
    cor_rate = fit_decay_rate(times[sel_c], tail[sel_c])
    return DeviationReport(times, probes, dev, resid, losses, rate, cor_rate, lam, flow.lambda_max)


def compare_finite_infinite(traj: Trajectory, flow: LinearFlow, probes, times,
                            window=None) -> DeviationReport:
    times = np.asarray(times, dtype=float)
    if times.min() < traj.times[0] - 1e-12 or times.max() > traj.times[-1] + 1e-12:
        raise ValueError("requested times fall outside the trajectory")
    probes = np.atleast_1d(np.asarray(probes, dtype=float))
    thetas = [traj.theta_at(t) for t in times]
    fp = np.stack([network_eval(th, traj.sigma, probes) for th in thetas])
    ft = np.stack([network_eval(th, traj.sigma, traj.data.X) for th in thetas])
    # the flow uses this trajectory's initial outputs
    flow = LinearFlow(flow.K, flow.Y, network_eval(traj.theta_at(0.0), traj.sigma, traj.data.X),
                      flow.cross)
    return compare_outputs(fp, ft, flow, probes, times, window)
