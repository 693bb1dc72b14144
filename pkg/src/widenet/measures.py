"""Evolution of the output law under the infinite-width flow, and Prokhorov distances.

The infinite-width flow acts on output vectors ``y`` at probe points
``x_1..x_k`` (the first ``N`` of which are the training inputs) as the affine map

    Phi_t(y) = y + K_x K^{-1} (e^{-K t} - 1) (pi_N y - Y)

so the Gaussian law at initialization stays Gaussian for all ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching, maximum_flow
from scipy.spatial.distance import cdist
from scipy.stats.qmc import MultivariateNormalQMC

from .distributions import make_rng
from .edgeworth import gaussian_density_k, gaussian_log_density_k
from .moments import covariance, estimate_moments_quadrature
from .network import ParamVector, network_eval
from .training import LinearFlow, integrate_ensemble, linear_flow, loglog_slope


@dataclass(frozen=True, eq=False)
class FlowMap:
    """``K``: kernel on training points; ``cross``: ``(k, N)`` kernel rows for the probes."""

    K: np.ndarray
    cross: np.ndarray
    Y: np.ndarray
    _flow: LinearFlow = field(init=False, repr=False)

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        cross = np.atleast_2d(np.asarray(self.cross, dtype=float))
        N = K.shape[0]
        if cross.shape[1] != N or cross.shape[0] < N:
            raise ValueError("cross kernel must have shape (k, N) with k >= N")
        if not np.allclose(cross[:N], K, rtol=1e-10, atol=1e-12):
            raise ValueError("the first N probe points must be the training points")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "cross", cross)
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float).reshape(-1))
        flow = LinearFlow(K, self.Y, self.Y)
        flow.require_invertible()
        object.__setattr__(self, "_flow", flow)

    @classmethod
    def from_flow(cls, flow: LinearFlow, extra_probes=()) -> "FlowMap":
        """Probes are the training points followed by ``extra_probes``."""
        rows = [flow.K]
        if len(extra_probes):
            rows.append(flow.cross_rows(extra_probes))
        return cls(flow.K, np.vstack(rows), flow.Y)

    @property
    def N(self) -> int:
        return self.K.shape[0]

    @property
    def k(self) -> int:
        return self.cross.shape[0]

    @property
    def lambda_inf(self) -> float:
        return self._flow.lambda_inf

    def linear_part(self, t: float) -> np.ndarray:
        """``B(t) = I + K_x K^{-1} (e^{-K t} - 1) pi_N``."""
        B = np.eye(self.k)
        B[:, : self.N] += self.cross @ self._flow.resolvent_factor(t)
        return B

    def offset(self, t: float) -> np.ndarray:
        """``Phi_t(0)``."""
        return -self.cross @ (self._flow.resolvent_factor(t) @ self.Y)


def flow_map(fm: FlowMap, y, t: float) -> np.ndarray:
    """Apply ``Phi_t``; ``y`` has shape ``(..., k)``."""
    y = np.asarray(y, dtype=float)
    R = fm._flow.resolvent_factor(t)
    shift = (y[..., : fm.N] - fm.Y) @ R.T @ fm.cross.T
    return y + shift


def flow_jacobian_det(fm: FlowMap, t: float) -> float:
    """``e^{t tr K}``: the volume factor ``|det d Phi_{-t}|`` entering the evolved density.

    ``Phi_t`` itself contracts volume by ``e^{-t tr K}``.
    """
    with np.errstate(over="ignore"):
        return float(np.exp(t * float(np.trace(fm.K))))


@dataclass(frozen=True, eq=False)
class EvolvedGaussian:
    fm: FlowMap
    C: np.ndarray
    t: float

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(getattr(self.C, "values", self.C), dtype=float))
        if C.shape != (self.fm.k, self.fm.k):
            raise ValueError("covariance must be k x k")
        object.__setattr__(self, "C", C)

    @property
    def mean(self) -> np.ndarray:
        return self.fm.offset(self.t)

    @property
    def covariance(self) -> np.ndarray:
        B = self.fm.linear_part(self.t)
        S = B @ self.C @ B.T
        return 0.5 * (S + S.T)

    def precision(self) -> np.ndarray:
        """``A(t) = B(-t)^T C^{-1} B(-t)``."""
        Binv = self.fm.linear_part(-self.t)
        return Binv.T @ np.linalg.inv(self.C) @ Binv

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Affine images of exact Gaussian draws."""
        z = rng.multivariate_normal(np.zeros(self.fm.k), self.C, size=size, method="cholesky")
        return flow_map(self.fm, z, self.t)


def evolved_density(eg: EvolvedGaussian, y):
    """Change of variables: ``nu_0(Phi_{-t}(y)) |det d Phi_{-t}|``."""
    with np.errstate(over="ignore", invalid="ignore"):
        back = flow_map(eg.fm, y, -eg.t)
    # log space: the Jacobian alone overflows once t tr K passes ~709
    return _exp_log_density(eg.C, back, eg.t * float(np.trace(eg.fm.K)))


def _exp_log_density(C, back, log_jacobian):
    """Gaussian density at ``back`` times ``exp(log_jacobian)``; zero where ``back`` overflowed."""
    finite = np.all(np.isfinite(back), axis=-1)
    safe = np.where(finite[..., None], back, 0.0)
    with np.errstate(over="ignore"):
        out = np.where(finite, np.exp(gaussian_log_density_k(C, safe) + log_jacobian), 0.0)
    return out if out.ndim else float(out)


def evolved_density_training(eg: EvolvedGaussian, y):
    """Explicit form for probes equal to the training points (``k = N``).

    ``nu_0(Y + e^{K t}(y - Y)) det(e^{K t})`` with a general matrix exponential.
    """
    fm = eg.fm
    if fm.k != fm.N:
        raise ValueError("the explicit form needs probes equal to the training points")
    E = scipy.linalg.expm(fm.K * eg.t)
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        back = fm.Y + (y - fm.Y) @ E.T
    _, log_det = np.linalg.slogdet(E)
    return _exp_log_density(eg.C, back, log_det)


def marginal_density(eg: EvolvedGaussian, coords, y_sub):
    """Closed-form Gaussian marginal of the evolved law on ``coords``."""
    idx = np.asarray(list(coords), dtype=int)
    mean = eg.mean[idx]
    cov = eg.covariance[np.ix_(idx, idx)]
    y_sub = np.asarray(y_sub, dtype=float)
    return gaussian_density_k(cov, y_sub - mean)


def mass_near_labels(fm: FlowMap, C, times, radius: float, samples: int, seed: int,
                     relative: bool = False) -> np.ndarray:
    """Fraction of evolved-Gaussian mass with ``||pi_N y - Y|| <= radius``.

    The same Gaussian draws are pushed to every time.  With ``relative=True``
    the radius is multiplied by each draw's initial distance ``||pi_N y0 - Y||``.
    """
    rng = make_rng(seed)
    C = np.atleast_2d(np.asarray(getattr(C, "values", C), dtype=float))
    z = rng.multivariate_normal(np.zeros(fm.k), C, size=samples, method="cholesky")
    d0 = np.linalg.norm(z[:, : fm.N] - fm.Y, axis=1)
    out = []
    for t in times:
        d = np.linalg.norm(flow_map(fm, z, t)[:, : fm.N] - fm.Y, axis=1)
        bound = radius * d0 if relative else radius
        out.append(float(np.mean(d <= bound)))
    return np.array(out)


# ---- Prokhorov distance -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Equal-weight atoms in R^k, stored as an ``(M, k)`` array."""

    atoms: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[0] < 1 or not np.all(np.isfinite(a)):
            raise ValueError("empirical measure needs at least one finite atom")
        object.__setattr__(self, "atoms", a)

    @property
    def M(self) -> int:
        return self.atoms.shape[0]


def _matched_mass_line(a: np.ndarray, b: np.ndarray, rho: float) -> tuple[int, int]:
    """Greedy transport between sorted 1-D atoms; optimal because neighbourhoods are intervals.

    Each atom of ``a`` carries mass ``len(b)`` and each atom of ``b`` mass ``len(a)``.
    """
    Ma, Mb = a.size, b.size
    ra, rb = Mb, Ma
    i = j = moved = 0
    while i < Ma and j < Mb:
        if abs(a[i] - b[j]) <= rho:
            step = min(ra, rb)
            moved += step
            ra -= step
            rb -= step
            if ra == 0:
                i, ra = i + 1, Mb
            if rb == 0:
                j, rb = j + 1, Ma
        elif a[i] < b[j]:
            i, ra = i + 1, Mb
        else:
            j, rb = j + 1, Ma
    return moved, Ma * Mb


def _matched_mass(D: np.ndarray, rho: float) -> tuple[int, int]:
    """Maximum transportable mass over edges with distance <= rho, as (numerator, denominator)."""
    Ma, Mb = D.shape
    adj = csr_matrix(D <= rho, dtype=np.int32)
    if Ma == Mb:
        match = maximum_bipartite_matching(adj, perm_type="column")
        return int(np.sum(match >= 0)), Ma
    rows, cols = adj.nonzero()
    src, sink = 0, Ma + Mb + 1
    heads = np.concatenate([np.full(Ma, src), rows + 1, Ma + 1 + np.arange(Mb)])
    tails = np.concatenate([1 + np.arange(Ma), Ma + 1 + cols, np.full(Mb, sink)])
    caps = np.concatenate([np.full(Ma, Mb), np.full(rows.size, Ma * Mb), np.full(Mb, Ma)])
    graph = csr_matrix((caps.astype(np.int64), (heads, tails)), shape=(sink + 1, sink + 1))
    flow = maximum_flow(graph.astype(np.int32) if Ma * Mb < 2**31 else graph, src, sink)
    return int(flow.flow_value), Ma * Mb


def prokhorov_feasible(a: EmpiricalMeasure, b: EmpiricalMeasure, rho: float) -> bool:
    """Whether ``mu_a(A) <= mu_b(A^rho) + rho`` for every set ``A`` (closed neighbourhoods)."""
    num, den = _matched_mass(cdist(a.atoms, b.atoms), rho)
    return (den - num) / den <= rho


def prokhorov_distance(a: EmpiricalMeasure, b: EmpiricalMeasure, tol: float = 1e-9) -> float:
    """Prokhorov distance between two uniform empirical measures.

    The worst-case set deficit ``1 - F(rho)`` is a step function of rho that only
    moves at pairwise distances, so the infimum is located by bisection over the
    sorted distinct distances and is returned exactly (well within ``tol``).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if a.atoms.shape[1] == 1:
        # direct differences: cdist squares them and tiny gaps underflow
        xa, xb = np.sort(a.atoms[:, 0]), np.sort(b.atoms[:, 0])
        D = np.abs(xa[:, None] - xb[None, :])

        def matched(rho):
            return _matched_mass_line(xa, xb, rho)
    else:
        D = cdist(a.atoms, b.atoms)

        def matched(rho):
            return _matched_mass(D, rho)

    cand = np.unique(np.concatenate([[0.0], D.ravel()]))
    cand = cand[cand < 1.0]

    def deficit(j):
        num, den = matched(cand[j])
        return (den - num) / den

    # first candidate index with cand[j] >= deficit(j); monotone in j
    lo, hi = 0, cand.size
    while lo < hi:
        mid = (lo + hi) // 2
        if cand[mid] >= deficit(mid):
            hi = mid
        else:
            lo = mid + 1
    prev = 1.0 if lo == 0 else deficit(lo - 1)
    best = prev if lo == cand.size else min(prev, cand[lo])
    return float(min(best, 1.0))


# ---- width-scaling experiment -------------------------------------------------

@dataclass
class ScalingReport:
    rows: list            # one dict per width, keys as in COLUMNS
    slope: float
    lambda_inf: float
    per_group: list = field(default_factory=list, repr=False)

    COLUMNS = ("n", "t", "pi_fin_vs_inf", "pi_fin_vs_interp", "pi_interp_vs_inf",
               "baseline_same_law", "M_atoms")

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])


def width_scaling_experiment(dist, sigma, data, widths, t_units: float = 2.0, atoms: int = 512,
                        groups: int = 16, base_seed: int = 0, tolerance: float = 1e-7,
                        nodes: int = 96, extra_probes=(), tol: float = 1e-9) -> ScalingReport:
    """Prokhorov distances between finite-width, interpolating and infinite-width output laws.

    For each width, ``groups`` independent sets of ``atoms`` networks are trained to
    ``t = t_units / lambda_inf``.  The infinite-width law is represented by scrambled
    Sobol Gaussian draws pushed through ``Phi_t``; the baseline compares i.i.d. draws
    from that same law against this reference.
    """
    probes = np.concatenate([data.X, np.asarray(extra_probes, dtype=float)])
    flow = linear_flow(dist, sigma, data, data.Y, nodes=nodes)
    fm = FlowMap.from_flow(flow, extra_probes)
    C = covariance(estimate_moments_quadrature(dist, sigma, probes, 2, nodes)).values
    t = t_units / fm.lambda_inf
    k = probes.size
    rows, per_group = [], []
    for n in widths:
        dists = []
        for g in range(groups):
            rng = make_rng([base_seed, n, g])
            w1, b1, w2, b2 = dist.sample_units(rng, (atoms, n))
            thetas = [ParamVector(w1[i], b1[i], w2[i], b2[i]) for i in range(atoms)]
            f0 = np.stack([network_eval(th, sigma, probes) for th in thetas])
            if t > 0:
                ens = integrate_ensemble(thetas, sigma, data, t, [0.0, t], tolerance=tolerance)
                fT = np.stack([network_eval(ParamVector.from_flat(s), sigma, probes)
                               for s in ens.states[-1]])
            else:
                fT = f0.copy()
            interp = flow_map(fm, f0, t)
            qmc = MultivariateNormalQMC(np.zeros(k), C, seed=rng)
            inf = flow_map(fm, qmc.random(atoms), t)
            same = flow_map(fm, rng.multivariate_normal(np.zeros(k), C, size=atoms,
                                                        method="cholesky"), t)
            E = EmpiricalMeasure
            d = (prokhorov_distance(E(fT), E(inf), tol), prokhorov_distance(E(fT), E(interp), tol),
                 prokhorov_distance(E(interp), E(inf), tol), prokhorov_distance(E(same), E(inf), tol))
            dists.append(d)
        per_group.append(dists)
        mean = np.mean(dists, axis=0)
        rows.append(dict(zip(ScalingReport.COLUMNS,
                             (n, t, float(mean[0]), float(mean[1]), float(mean[2]), float(mean[3]),
                              atoms))))
    slope = loglog_slope(widths, [r["pi_fin_vs_inf"] for r in rows]) if t > 0 else float("nan")
    return ScalingReport(rows, slope, fm.lambda_inf, per_group)
