import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from widenet.activations import RELU, SIGMOID, TANH
from widenet.distributions import make_rng, standard_normal
from widenet.network import ParamVector, TrainingSet, network_eval, sample_params
from widenet.ntk import ntk_finite_matrix
from widenet.training import (IntegratorError, LinearFlow, _solve, compare_finite_infinite, fit_decay_rate,
                              integrate_ensemble, integrate_gradient_flow, limit_prediction,
                              linear_flow, linear_flow_general, linear_flow_training_outputs, loss,
                              loglog_slope)

DATA = TrainingSet([-1.0, 0.0, 1.0], [0.5, -0.3, 0.8])


def random_spd(rng, k):
    a = rng.standard_normal((k, k))
    return a @ a.T / k + 0.3 * np.eye(k)


def random_flow(seed, N, probes=()):
    """A flow with a random SPD kernel and a consistent cross-kernel on extra probe points."""
    rng = make_rng(seed)
    big = random_spd(rng, N + len(probes))
    K = big[:N, :N]
    probe_rows = big[N:, :N]
    X = np.arange(N, dtype=float)
    table = {float(x): K[i] for i, x in enumerate(X)}
    table.update({float(p): probe_rows[i] for i, p in enumerate(probes)})

    def cross(xs):
        return np.stack([table[float(x)] for x in xs])

    return LinearFlow(K, rng.standard_normal(N), rng.standard_normal(N), cross), X


# ---- loss ----

def test_loss_examples():
    th = sample_params(standard_normal(), 6, 0)
    exact = TrainingSet([0.2, 0.4], network_eval(th, TANH, [0.2, 0.4]))
    assert loss(th, TANH, exact) == 0.0
    off = TrainingSet([0.2], [network_eval(th, TANH, 0.2) - 2.0])
    assert loss(th, TANH, off) == pytest.approx(2.0, rel=1e-14)


@given(st.integers(0, 2 ** 32 - 1))
def test_loss_matches_formula(seed):
    th = sample_params(standard_normal(), 5, seed)
    direct = 0.5 * sum((y - network_eval(th, TANH, x)) ** 2 for x, y in zip(DATA.X, DATA.Y))
    assert loss(th, TANH, DATA) == pytest.approx(direct, rel=1e-13)


# ---- finite-width gradient flow ----

def test_stationary_initialization():
    th = sample_params(standard_normal(), 8, 1)
    data = TrainingSet(DATA.X, network_eval(th, TANH, DATA.X))
    traj = integrate_gradient_flow(th, TANH, data, 5.0)
    assert np.all(traj.thetas == th.flat())


@pytest.mark.parametrize("sigma", [TANH, SIGMOID], ids=lambda s: s.name)
def test_loss_non_increasing(sigma):
    th = sample_params(standard_normal(), 32, 2)
    traj = integrate_gradient_flow(th, sigma, DATA, 30.0, t_eval=np.linspace(0, 30, 301))
    assert np.all(np.diff(traj.losses()) <= 0.0)


def test_tolerance_halving_self_convergence():
    th = sample_params(standard_normal(), 16, 3)
    tol = 1e-8
    a = integrate_gradient_flow(th, TANH, DATA, 10.0, tol).outputs[-1, 0]
    b = integrate_gradient_flow(th, TANH, DATA, 10.0, tol / 2).outputs[-1, 0]
    assert abs(a - b) < 10 * tol


def test_stored_outputs_reproducible():
    th = sample_params(standard_normal(), 10, 4)
    traj = integrate_gradient_flow(th, TANH, DATA, 3.0, t_eval=np.linspace(0, 3, 7))
    assert np.all(np.diff(traj.times) > 0)
    for t, theta, out in zip(traj.times, traj.thetas, traj.outputs):
        assert np.allclose(network_eval(ParamVector.from_flat(theta), TANH, DATA.X), out, atol=1e-12)
    assert traj.steps > 0 and traj.evaluations > traj.steps


def test_output_ode_identity_along_trajectory():
    th = sample_params(standard_normal(), 24, 5)
    traj = integrate_gradient_flow(th, TANH, DATA, 4.0, tolerance=1e-12)
    x, h = np.array([0.35]), 1e-4
    for t in (0.5, 2.0, 3.5):
        numeric = (traj.outputs_at(t + h, x) - traj.outputs_at(t - h, x)) / (2 * h)
        theta = traj.theta_at(t)
        K = ntk_finite_matrix(theta, TANH, x, DATA.X)
        exact = K @ (DATA.Y - network_eval(theta, TANH, DATA.X))
        assert numeric == pytest.approx(exact, rel=1e-3)


def test_argument_checks():
    th = sample_params(standard_normal(), 4, 0)
    with pytest.raises(ValueError):
        integrate_gradient_flow(th, TANH, DATA, 0.0)
    with pytest.raises(ValueError):
        integrate_gradient_flow(th, TANH, DATA, 1.0, tolerance=0.0)
    with pytest.raises(ValueError):
        integrate_gradient_flow(th, RELU, DATA, 1.0)


def test_step_collapse_raises_integrator_error():
    # y' = y^2 from y(0) = 1 blows up at t = 1, so the step size collapses
    with pytest.raises(IntegratorError, match="step size"):
        _solve(lambda t, y: y * y, np.array([1.0]), 2.0, 1e-8, None, "DOP853")


def test_non_finite_parameters_rejected():
    th = ParamVector([1.0, np.nan], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError, match="finite"):
        integrate_gradient_flow(th, TANH, DATA, 1.0)


def test_ensemble_matches_individual_runs():
    thetas = [sample_params(standard_normal(), 12, s) for s in range(3)]
    times = [0.0, 2.0, 4.0]
    ens = integrate_ensemble(thetas, TANH, DATA, 4.0, times, tolerance=1e-11)
    for s, th in enumerate(thetas):
        single = integrate_gradient_flow(th, TANH, DATA, 4.0, 1e-11, times)
        assert np.allclose(ens.states[:, s], single.thetas, atol=1e-8)
    with pytest.raises(ValueError):
        integrate_ensemble([thetas[0], sample_params(standard_normal(), 5, 0)], TANH, DATA, 1.0, [0, 1])


# ---- infinite-width linear flow ----

def test_linear_flow_at_time_zero():
    flow, _ = random_flow(0, 3)
    assert np.allclose(linear_flow_training_outputs(flow, 0.0), flow.y0, atol=1e-15)
    assert linear_flow_general(flow, 1.0, 0.123, 0.0) == 0.123


def test_scalar_linear_flow():
    flow = LinearFlow([[2.0]], [1.0], [2.0])
    for t in (0.1, 1.0, 3.0):
        assert linear_flow_training_outputs(flow, t)[0] - 1.0 == pytest.approx(math.exp(-2 * t), rel=1e-14)


def test_negative_time_allowed():
    flow = LinearFlow([[2.0]], [1.0], [2.0])
    assert linear_flow_training_outputs(flow, -1.0)[0] == pytest.approx(1.0 + math.exp(2.0))


@pytest.mark.parametrize("N", [1, 3, 5])
def test_closed_form_matches_ode(N):
    flow, X = random_flow(N, N, probes=(0.5,))
    y0_x = 0.7
    rhs_rows = flow.cross_rows([0.5])[0]

    def rhs(t, state):
        train, probe = state[:N], state[N]
        r = flow.Y - train
        return np.concatenate([flow.K @ r, [rhs_rows @ r]])

    ts = np.linspace(0, 10, 11)
    sol = solve_ivp(rhs, (0, 10), np.concatenate([flow.y0, [y0_x]]), method="DOP853",
                    t_eval=ts, rtol=1e-13, atol=1e-13)
    for i, t in enumerate(ts):
        assert np.max(np.abs(linear_flow_training_outputs(flow, t) - sol.y[:N, i])) < 1e-8
        assert abs(linear_flow_general(flow, 0.5, y0_x, t) - sol.y[N, i]) < 1e-8


def test_general_flow_reproduces_training_outputs():
    flow, X = random_flow(7, 4)
    for t in (0.3, 2.0, 9.0):
        train = linear_flow_training_outputs(flow, t)
        gen = linear_flow_general(flow, X, flow.y0, t)
        assert np.max(np.abs(gen - train)) < 1e-12


def test_limit_prediction_interpolates():
    flow, X = random_flow(8, 4)
    assert np.allclose(limit_prediction(flow, X, flow.y0), flow.Y, atol=1e-12)
    still = LinearFlow(flow.K, flow.Y, flow.Y, flow.cross)
    assert limit_prediction(still, X[1], 0.9) == 0.9


def test_limit_attained_at_large_time():
    flow = linear_flow(standard_normal(), TANH, DATA, [0.1, 0.2, -0.4])
    t = 50 / flow.lambda_inf
    assert abs(linear_flow_general(flow, 0.3, 0.05, t) - limit_prediction(flow, 0.3, 0.05)) < 1e-8


def test_singular_kernel_rejected():
    flow = LinearFlow([[1.0, 1.0], [1.0, 1.0]], [0.0, 0.0], [1.0, 1.0], lambda xs: np.ones((len(xs), 2)))
    with pytest.raises(np.linalg.LinAlgError):
        limit_prediction(flow, 0.3, 0.0)
    with pytest.raises(np.linalg.LinAlgError):
        linear_flow_general(flow, 0.3, 0.0, 1.0)


# ---- comparisons ----

def test_fit_decay_rate_recovers_exponent():
    t = np.linspace(0, 5, 50)
    assert fit_decay_rate(t, 3 * np.exp(-0.7 * t)) == pytest.approx(0.7, rel=1e-12)
    assert math.isnan(fit_decay_rate(t, np.zeros_like(t)))


def test_loglog_slope():
    assert loglog_slope([1, 2, 4], [1, 0.5, 0.25]) == pytest.approx(-1.0)
    assert math.isnan(loglog_slope([8], [1.0]))


def test_zero_residual_initialization_has_zero_deviation():
    th = sample_params(standard_normal(), 32, 0)
    data = TrainingSet(DATA.X, network_eval(th, TANH, DATA.X))
    flow = linear_flow(standard_normal(), TANH, data, data.Y)
    times = np.linspace(0, 5, 6)
    traj = integrate_gradient_flow(th, TANH, data, 5.0, t_eval=times)
    rep = compare_finite_infinite(traj, flow, np.linspace(-1, 1, 5), times)
    assert rep.sup_dev == 0.0


def test_wider_network_tracks_infinite_flow_more_closely():
    flow = linear_flow(standard_normal(), TANH, DATA, DATA.Y, nodes=96)
    times = np.linspace(0, 8 / flow.lambda_inf, 41)
    probes = np.linspace(-1, 1, 17)
    sup = {}
    for n in (2 ** 7, 2 ** 14):
        th = sample_params(standard_normal(), n, [0, n])
        traj = integrate_gradient_flow(th, TANH, DATA, times[-1], 1e-8, times)
        sup[n] = compare_finite_infinite(traj, flow, probes, times).sup_dev
    assert sup[2 ** 14] < sup[2 ** 7]


def test_compare_rejects_times_outside_trajectory():
    th = sample_params(standard_normal(), 8, 0)
    flow = linear_flow(standard_normal(), TANH, DATA, DATA.Y)
    traj = integrate_gradient_flow(th, TANH, DATA, 1.0)
    with pytest.raises(ValueError):
        compare_finite_infinite(traj, flow, [0.0], [0.0, 2.0])
