import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from widenet.distributions import make_rng
from widenet.edgeworth import (EdgeworthDensity1D, EdgeworthDensityK, SingularCovarianceError,
                               edgeworth_density_1d, edgeworth_density_k, edgeworth_total_mass,
                               gaussian_density_k, hermite, hermite_tensors)
from widenet.moments import CumulantTable, covariance_matrix, multi_indices
from widenet.training import loglog_slope

SKEWED = dict(mu2=11.6, mu3=607.6, mu4=34131.4)


def random_spd(rng, k):
    a = rng.standard_normal((k, k))
    return a @ a.T + 0.5 * np.eye(k)


def cumulant_table(k, rng=None, scale=0.3, zero=False):
    vals = {}
    for r in multi_indices(k, 4):
        vals[r] = 0.0 if zero or sum(r) < 3 else scale * float(rng.standard_normal())
    return CumulantTable(tuple(range(k)), 4, vals)


# ---- Hermite polynomials ----

def test_hermite_values_at_zero():
    assert hermite(3, 0.0) == 0.0
    assert hermite(4, 0.0) == 12.0
    assert hermite(6, 0.0) == -120.0


@pytest.mark.parametrize("m", range(13))
def test_hermite_matches_sympy(m):
    x = sp.symbols("x")
    poly = sp.lambdify(x, sp.hermite(m, x), "numpy")
    grid = np.linspace(-3, 3, 41)
    assert np.allclose(hermite(m, grid), poly(grid) * np.ones_like(grid), rtol=1e-12, atol=1e-9)


def test_hermite_degree_range():
    for m in (-1, 13, 2.5):
        with pytest.raises(ValueError):
            hermite(m, 0.3)


@pytest.mark.parametrize("m", range(1, 5))
def test_gaussian_derivative_identity(m):
    mu2, h = 1.7, 1e-3
    y = np.linspace(-3, 3, 25)
    g = lambda v: np.exp(-v * v / (2 * mu2))  # noqa: E731
    # central differences of the (m-1)-th derivative given by the identity
    prev = lambda v: ((-1) ** (m - 1) * (2 * mu2) ** (-(m - 1) / 2)  # noqa: E731
                      * hermite(m - 1, v / math.sqrt(2 * mu2)) * g(v))
    fd = (prev(y + h) - prev(y - h)) / (2 * h)
    fd = (8 * (prev(y + h) - prev(y - h)) - (prev(y + 2 * h) - prev(y - 2 * h))) / (12 * h)
    exact = (-1) ** m * (2 * mu2) ** (-m / 2) * hermite(m, y / math.sqrt(2 * mu2)) * g(y)
    assert np.max(np.abs(fd - exact)) < 1e-8


# ---- Gaussian densities ----

def test_gaussian_density_examples():
    assert gaussian_density_k([[1.0]], [0.0]) == pytest.approx(0.3989422804, abs=1e-10)
    assert gaussian_density_k(np.eye(2), [0.0, 0.0]) == pytest.approx(1 / (2 * math.pi), rel=1e-15)


def test_gaussian_density_normalized_on_box():
    rng = make_rng(3)
    C = random_spd(rng, 2)
    s = np.sqrt(np.diag(C))
    z, w = np.polynomial.legendre.leggauss(200)
    ya, yb = 10 * s[0] * z, 10 * s[1] * z
    Y = np.stack(np.meshgrid(ya, yb, indexing="ij"), axis=-1).reshape(-1, 2)
    W = np.outer(w * 10 * s[0], w * 10 * s[1]).ravel()
    assert np.dot(W, gaussian_density_k(C, Y)) == pytest.approx(1.0, abs=1e-6)


def test_gaussian_density_singular_raises():
    with pytest.raises(SingularCovarianceError):
        gaussian_density_k([[1.0, 1.0], [1.0, 1.0]], [0.0, 0.0])


# ---- one dimension ----

def test_symmetric_moments_reduce_to_gaussian():
    mu2 = 0.8
    y = np.linspace(-5, 5, 101)
    for n in (1, 10, 1000):
        d = EdgeworthDensity1D(mu2, 0.0, 3 * mu2 ** 2, n)
        g = d.with_order("gaussian")
        assert np.max(np.abs(edgeworth_density_1d(d, y) - edgeworth_density_1d(g, y))) <= 1e-15


@given(st.floats(0.1, 20), st.floats(-50, 50), st.floats(0, 500), st.integers(1, 10 ** 6))
def test_value_at_origin(mu2, mu3, excess, n):
    d = EdgeworthDensity1D(mu2, mu3, excess + 3 * mu2 ** 2, n)
    expected = (1 / math.sqrt(2 * math.pi * mu2)) * (
        1 + (excess / (8 * mu2 ** 2) - 5 * mu3 ** 2 / (24 * mu2 ** 3)) / n)
    assert edgeworth_density_1d(d, 0.0) == pytest.approx(expected, rel=1e-11, abs=1e-14)
    assert edgeworth_density_1d(d.with_order("half"), 0.0) == pytest.approx(
        1 / math.sqrt(2 * math.pi * mu2), rel=1e-14)


def operator_form_density(mu2, mu3, mu4, n):
    """Gaussian plus cumulant-weighted derivatives of the Gaussian, by symbolic differentiation."""
    y = sp.symbols("y")
    g = sp.exp(-y ** 2 / (2 * sp.Float(mu2))) / sp.sqrt(2 * sp.pi * sp.Float(mu2))
    lam3, lam4 = sp.Float(mu3), sp.Float(mu4 - 3 * mu2 ** 2)
    expr = (g - lam3 / 6 * sp.diff(g, y, 3) / sp.sqrt(n)
            + (lam4 / 24 * sp.diff(g, y, 4) + lam3 ** 2 / 72 * sp.diff(g, y, 6)) / n)
    return sp.lambdify(y, expr, "numpy")


def test_skewed_curve_matches_operator_form():
    n = 300
    oracle = operator_form_density(SKEWED["mu2"], SKEWED["mu3"], SKEWED["mu4"], n)
    grid = np.linspace(-6 * math.sqrt(11.6), 6 * math.sqrt(11.6), 512)
    d = EdgeworthDensity1D(n=n, **SKEWED)
    assert np.max(np.abs(edgeworth_density_1d(d, grid) - oracle(grid))) < 1e-10


def test_half_order_term_only_sees_third_moment():
    y = np.linspace(-3, 3, 100)
    a = EdgeworthDensity1D(1.0, 0.4, 3.0, 50, "half")
    b = EdgeworthDensity1D(1.0, 0.4, 7.0, 50, "half")
    assert np.array_equal(edgeworth_density_1d(a, y), edgeworth_density_1d(b, y))


def test_converges_to_gaussian_at_root_n_rate():
    mu2, mu3, mu4 = 1.0, 0.8, 4.0
    y = np.linspace(-6, 6, 2001)
    widths = [10 ** 2, 10 ** 3, 10 ** 4, 10 ** 5]
    gauss = edgeworth_density_1d(EdgeworthDensity1D(mu2, mu3, mu4, 1, "gaussian"), y)
    sups = [np.max(np.abs(edgeworth_density_1d(EdgeworthDensity1D(mu2, mu3, mu4, n), y) - gauss))
            for n in widths]
    assert abs(loglog_slope(widths, sups) + 0.5) <= 0.05


@pytest.mark.xfail(strict=True, reason="skewness 15.4 drives the curve below zero near -2.4 sd "
                                        "for every n below about 4500")
def test_nonnegative_near_center_for_skewed_moments_from_n_100():
    s = math.sqrt(SKEWED["mu2"])
    y = np.linspace(-4 * s, 4 * s, 2001)
    for n in (100, 300, 1000, 10 ** 4):
        assert edgeworth_density_1d(EdgeworthDensity1D(n=n, **SKEWED), y).min() >= 0.0


def test_nonnegative_near_center_for_skewed_moments_at_large_n():
    s = math.sqrt(SKEWED["mu2"])
    y = np.linspace(-4 * s, 4 * s, 20001)
    assert edgeworth_density_1d(EdgeworthDensity1D(n=100, **SKEWED), y).min() < 0.0
    for n in (5000, 10 ** 4, 10 ** 5):
        assert edgeworth_density_1d(EdgeworthDensity1D(n=n, **SKEWED), y).min() >= 0.0


def test_negative_tails_are_not_clipped():
    d = EdgeworthDensity1D(n=5, **SKEWED)
    y = np.linspace(-40, 40, 4001)
    assert edgeworth_density_1d(d, y).min() < 0.0


def test_smoothing_is_gaussian_convolution():
    d = EdgeworthDensity1D(1.3, 0.9, 6.0, 20)
    h = 0.4
    y = np.linspace(-4, 4, 9)
    t, w = np.polynomial.hermite_e.hermegauss(80)
    conv = np.array([np.dot(w, edgeworth_density_1d(d, yy - h * t)) / math.sqrt(2 * math.pi) for yy in y])
    assert np.allclose(edgeworth_density_1d(d.smoothed(h), y), conv, atol=1e-12)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        EdgeworthDensity1D(0.0, 0.0, 0.0, 10)
    with pytest.raises(ValueError):
        EdgeworthDensity1D(1.0, 0.0, 3.0, 10, "two")


@settings(max_examples=50)
@given(st.floats(0.1, 20), st.floats(-50, 50), st.floats(0, 500), st.integers(1, 10 ** 4),
       st.sampled_from(["gaussian", "half", "one"]))
def test_total_mass_one_dimensional(mu2, mu3, excess, n, order):
    d = EdgeworthDensity1D(mu2, mu3, excess + 3 * mu2 ** 2, n, order)
    tol = 1e-12 if order == "gaussian" else 1e-9
    assert edgeworth_total_mass(d) == pytest.approx(1.0, abs=tol)


# ---- k dimensions ----

def test_hermite_tensors_one_dimensional():
    mu2 = 2.0
    y = np.linspace(-3, 3, 11)[:, None]
    h = hermite_tensors(np.array([[1 / mu2]]), y, 6)
    for m in range(7):
        expected = (2 * mu2) ** (-m / 2) * hermite(m, y[:, 0] / math.sqrt(2 * mu2))
        assert np.allclose(h[(m,)], expected, atol=1e-13)


def test_hermite_tensors_match_symbolic_derivatives():
    rng = make_rng(9)
    C = random_spd(rng, 2)
    A = np.linalg.inv(C)
    y1, y2 = sp.symbols("y1 y2")
    q = sp.Matrix([y1, y2])
    G = sp.exp(-(q.T * sp.Matrix(A) * q)[0] / 2)
    pts = rng.standard_normal((5, 2))
    h = hermite_tensors(A, pts, 4)
    for e in multi_indices(2, 4):
        expr = sp.diff(G, y1, e[0], y2, e[1]) * (-1) ** sum(e) / G
        f = sp.lambdify((y1, y2), sp.simplify(expr), "numpy")
        assert np.allclose(h[e], f(pts[:, 0], pts[:, 1]), atol=1e-10)


def test_zero_cumulants_equal_gaussian():
    rng = make_rng(4)
    C = random_spd(rng, 3)
    d = EdgeworthDensityK(covariance_matrix(C), cumulant_table(3, zero=True), 50)
    y = rng.standard_normal((100, 3))
    assert np.allclose(edgeworth_density_k(d, y), gaussian_density_k(C, y), rtol=1e-14, atol=0)


def test_k1_matches_one_dimensional():
    mu2, mu3, mu4, n = 1.4, 0.7, 7.2, 40
    cum = CumulantTable((0.0,), 4, {(1,): 0.0, (2,): mu2, (3,): mu3, (4,): mu4 - 3 * mu2 ** 2})
    y = np.linspace(-5, 5, 77)
    for order in ("gaussian", "half", "one"):
        dk = EdgeworthDensityK(covariance_matrix([[mu2]]), cum, n, order)
        d1 = EdgeworthDensity1D(mu2, mu3, mu4, n, order)
        assert np.allclose(edgeworth_density_k(dk, y[:, None]), edgeworth_density_1d(d1, y),
                           rtol=0, atol=1e-12)


def test_separable_case_is_product_without_higher_cross_terms():
    s1, s2, n = 0.9, 1.6, 30
    lam = {(3, 0): 0.5, (0, 3): -0.8, (4, 0): 1.1, (0, 4): 2.0}
    vals = {r: lam.get(r, 0.0) for r in multi_indices(2, 4)}
    vals[(2, 0)], vals[(0, 2)] = s1, s2
    d = EdgeworthDensityK(covariance_matrix(np.diag([s1, s2])), CumulantTable((0, 1), 4, vals), n)
    y = make_rng(5).standard_normal((50, 2)) * 2

    def ratios(mu2, l3, l4, v):
        arg = v / math.sqrt(2 * mu2)
        a = l3 / (12 * math.sqrt(2) * mu2 ** 1.5) * hermite(3, arg)
        b = l4 / (96 * mu2 ** 2) * hermite(4, arg) + l3 ** 2 / (576 * mu2 ** 3) * hermite(6, arg)
        return a, b

    a1, b1 = ratios(s1, 0.5, 1.1, y[:, 0])
    a2, b2 = ratios(s2, -0.8, 2.0, y[:, 1])
    g = gaussian_density_k(np.diag([s1, s2]), y)
    expected = g * (1 + (a1 + a2) / math.sqrt(n) + (b1 + b2 + a1 * a2) / n)
    assert np.allclose(edgeworth_density_k(d, y), expected, rtol=1e-12, atol=1e-15)


def test_third_order_free_table_has_no_half_correction():
    rng = make_rng(6)
    vals = {r: (0.0 if sum(r) == 3 else float(rng.standard_normal())) for r in multi_indices(2, 4)}
    C = random_spd(rng, 2)
    d = EdgeworthDensityK(covariance_matrix(C), CumulantTable((0, 1), 4, vals), 10, "half")
    y = rng.standard_normal((100, 2))
    assert np.array_equal(edgeworth_density_k(d, y), gaussian_density_k(C, y))


def test_missing_cumulant_orders_rejected():
    cum = CumulantTable((0.0,), 3, {(1,): 0.0, (2,): 1.0, (3,): 0.2})
    with pytest.raises(ValueError):
        EdgeworthDensityK(covariance_matrix([[1.0]]), cum, 10, "one")
    EdgeworthDensityK(covariance_matrix([[1.0]]), cum, 10, "half")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_total_mass_two_dimensional(seed):
    rng = make_rng(seed)
    d = EdgeworthDensityK(covariance_matrix(random_spd(rng, 2)), cumulant_table(2, rng), 25)
    assert edgeworth_total_mass(d) == pytest.approx(1.0, abs=1e-6)
