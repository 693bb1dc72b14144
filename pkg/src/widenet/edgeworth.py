"""Gaussian limit density and its Edgeworth corrections up to order 1/n.

Hermite polynomials here follow the *physicists'* convention
(``H_{m+1} = 2x H_m - 2m H_{m-1}``), which is the one produced by
differentiating ``exp(-y^2 / (2 mu2))`` with respect to ``y``::

    d^m/dy^m e^{-y^2/(2 mu2)} = (-1)^m (2 mu2)^{-m/2} H_m(y / sqrt(2 mu2)) e^{-y^2/(2 mu2)}

Using the probabilists' polynomials with the coefficients below would
silently change every correction term.

Multivariate corrections use Hermite tensors ``h_e`` defined by
``(-d)^e G = h_e G`` for the Gaussian ``G`` with covariance ``C``.  With
``A = C^{-1}`` and ``u = A y`` they satisfy the closed recurrence

    h_{e + e_i} = u_i h_e - sum_j A_ij e_j h_{e - e_j},

so every term is an explicit polynomial times the Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .moments import CovarianceMatrix, CumulantTable, index_factorial, multi_indices

ORDERS = ("gaussian", "half", "one")
MAX_HERMITE = 12


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def hermite(m: int, x):
    """Physicists' Hermite polynomial ``H_m(x)`` for ``0 <= m <= 12``."""
    if not 0 <= m <= MAX_HERMITE or int(m) != m:
        raise ValueError(f"Hermite degree must be an integer in 0..{MAX_HERMITE}")
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), 2.0 * x
    if m == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    for j in range(1, m):
        h_prev, h = h, 2.0 * x * h - 2.0 * j * h_prev
    return h if h.ndim else float(h)


def _as_matrix(C) -> np.ndarray:
    if isinstance(C, CovarianceMatrix):
        C = C.values
    return np.atleast_2d(np.asarray(C, dtype=float))


def _cholesky(C: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError("covariance matrix is singular or not positive definite") from None
    if np.min(np.diag(L)) <= 1e-300 or np.linalg.cond(C) > 1e14:
        raise SingularCovarianceError("covariance matrix is numerically singular")
    return L


def gaussian_log_density_k(C, y):
    """Log of the centred Gaussian density with covariance ``C``; ``y`` has shape ``(..., k)``."""
    C = _as_matrix(C)
    k = C.shape[0]
    L = _cholesky(C)
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != k and k == 1:
        y = y[..., None]
    z = np.linalg.solve(L, np.moveaxis(y, -1, 0).reshape(k, -1))
    quad = np.sum(z * z, axis=0).reshape(y.shape[:-1])
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    out = -0.5 * quad - 0.5 * (k * math.log(2.0 * math.pi) + log_det)
    return out if out.ndim else float(out)


def gaussian_density_k(C, y):
    """``exp(-y^T C^{-1} y / 2) / sqrt((2 pi)^k det C)``; ``y`` has shape ``(..., k)``."""
    out = np.exp(gaussian_log_density_k(C, y))
    return out if out.ndim else float(out)


# ---- one dimension ---------------------------------------------------------

@dataclass(frozen=True)
class EdgeworthDensity1D:
    mu2: float
    mu3: float
    mu4: float
    n: float
    order: str = "one"

    def __post_init__(self):
        if self.mu2 <= 0:
            raise ValueError("mu2 must be positive")
        if self.n < 1:
            raise ValueError("width n must be >= 1")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")

    @property
    def excess(self) -> float:
        """Fourth cumulant ``mu4 - 3 mu2^2``."""
        return self.mu4 - 3.0 * self.mu2 ** 2

    def with_order(self, order: str) -> "EdgeworthDensity1D":
        return EdgeworthDensity1D(self.mu2, self.mu3, self.mu4, self.n, order)

    def smoothed(self, bandwidth: float) -> "EdgeworthDensity1D":
        """Same expansion convolved with a Gaussian kernel of the given bandwidth.

        Convolution only adds ``bandwidth^2`` to the variance; higher cumulants
        and hence the correction operators are unchanged.
        """
        mu2 = self.mu2 + bandwidth ** 2
        return EdgeworthDensity1D(mu2, self.mu3, self.excess + 3.0 * mu2 ** 2, self.n, self.order)


def _correction_1d(d: EdgeworthDensity1D, y):
    """Ratio of the truncated density to the Gaussian."""
    y = np.asarray(y, dtype=float)
    if d.order == "gaussian":
        return np.ones_like(y)
    arg = y / math.sqrt(2.0 * d.mu2)
    c3 = d.mu3 / (12.0 * math.sqrt(2.0) * d.mu2 ** 1.5)
    out = 1.0 + c3 * hermite(3, arg) / math.sqrt(d.n)
    if d.order == "one":
        c4 = d.excess / (96.0 * d.mu2 ** 2)
        c6 = d.mu3 ** 2 / (576.0 * d.mu2 ** 3)
        out = out + (c4 * hermite(4, arg) + c6 * hermite(6, arg)) / d.n
    return out


def edgeworth_density_1d(d: EdgeworthDensity1D, y):
    y = np.asarray(y, dtype=float)
    gauss = np.exp(-y * y / (2.0 * d.mu2)) / math.sqrt(2.0 * math.pi * d.mu2)
    out = gauss * _correction_1d(d, y)
    return out if out.ndim else float(out)


# ---- k dimensions ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EdgeworthDensityK:
    covariance: CovarianceMatrix
    cumulants: CumulantTable | None
    n: float
    order: str = "one"

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        if self.n < 1:
            raise ValueError("width n must be >= 1")
        if self.order != "gaussian":
            needed = 3 if self.order == "half" else 4
            if self.cumulants is None or self.cumulants.max_order < needed:
                raise ValueError(f"cumulants up to total order {needed} are required")
            if self.cumulants.k != self.k:
                raise ValueError("cumulant table and covariance disagree on k")

    @property
    def k(self) -> int:
        return _as_matrix(self.covariance).shape[0]


def hermite_tensors(A: np.ndarray, y: np.ndarray, max_order: int) -> dict:
    """``h_e(y)`` for all multi-indices of total order <= max_order.

    ``y`` has shape ``(m, k)``; each value has shape ``(m,)``.
    """
    k = A.shape[0]
    u = y @ A.T
    h = {tuple([0] * k): np.ones(y.shape[0])}
    for e in multi_indices(k, max_order):
        i = next(j for j, v in enumerate(e) if v)
        base = list(e)
        base[i] -= 1
        val = u[:, i] * h[tuple(base)]
        for j in range(k):
            if base[j]:
                lower = list(base)
                lower[j] -= 1
                val = val - A[i, j] * base[j] * h[tuple(lower)]
        h[e] = val
    return h


def _correction_k(d: EdgeworthDensityK, y: np.ndarray) -> np.ndarray:
    if d.order == "gaussian":
        return np.ones(y.shape[0])
    C = _as_matrix(d.covariance)
    A = np.linalg.inv(C)
    k = C.shape[0]
    cum = d.cumulants
    top = 3 if d.order == "half" else 6
    h = hermite_tensors(A, y, top)
    third = [(r, cum[r] / index_factorial(r)) for r in multi_indices(k, 3, 3)]
    out = 1.0 + sum(c * h[r] for r, c in third) / math.sqrt(d.n)
    if d.order == "one":
        fourth = sum(cum[r] / index_factorial(r) * h[r] for r in multi_indices(k, 4, 4))
        square = np.zeros(y.shape[0])
        for r, cr in third:
            for s, cs in third:
                square = square + cr * cs * h[tuple(a + b for a, b in zip(r, s))]
        out = out + (fourth + 0.5 * square) / d.n
    return out


def edgeworth_density_k(d: EdgeworthDensityK, y):
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    ys = np.atleast_2d(y)
    if ys.shape[-1] != d.k:
        raise ValueError(f"expected points of dimension {d.k}")
    out = gaussian_density_k(d.covariance, ys) * _correction_k(d, ys)
    return float(out[0]) if single else out


def edgeworth_total_mass(d, nodes: int = 16) -> float:
    """Integral of the truncated density by Gauss-Hermite quadrature (exact here)."""
    z, w = hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    if isinstance(d, EdgeworthDensity1D):
        return float(np.dot(w, _correction_1d(d, math.sqrt(d.mu2) * z)))
    L = _cholesky(_as_matrix(d.covariance))
    k = L.shape[0]
    grid = np.stack(np.meshgrid(*([z] * k), indexing="ij"), axis=-1).reshape(-1, k)
    weights = np.prod(np.stack(np.meshgrid(*([w] * k), indexing="ij"), axis=-1).reshape(-1, k), axis=1)
    return float(np.dot(weights, _correction_k(d, grid @ L.T)))
