"""The five experiment runners behind the command-line interface.

Each runner takes a validated ``ExperimentConfig`` and returns a ``Report``:
named CSV tables, figures and a small summary dictionary.  Nothing here
touches the filesystem; ``write_report`` does that.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import gaussian_kde

from .config import ConfigError, ExperimentConfig
from .distributions import QuadratureUnsupported, make_rng
from .edgeworth import EdgeworthDensity1D, edgeworth_density_1d
from .measures import ScalingReport, width_scaling_experiment
from .moments import (estimate_moments_mc, estimate_moments_quadrature, format_index,
                      is_degenerate, moments_to_cumulants)
from .network import ParamVector, TrainingSet, check_inputs, network_eval, sample_params
from .ntk import ntk_finite_matrix, ntk_infinite_kernel
from .outputs import csv_text, write_manifest, write_text
from .plotting import Figure, Series, write_svg
from .training import (LinearFlow, compare_outputs, integrate_gradient_flow, linear_flow,
                       loglog_slope)

KDE_ROUGHNESS = 1.0 / (2.0 * math.sqrt(math.pi))  # integral of the squared Gaussian kernel


@dataclass
class Table:
    name: str
    header: list
    rows: list


@dataclass
class Report:
    kind: str
    tables: list = field(default_factory=list)
    figures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def table(self, name: str) -> Table:
        return next(t for t in self.tables if t.name == name)


def run_cells(fn, cells, threads: int = 1):
    """Map ``fn`` over independent cells, preserving order."""
    if threads <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


def _moments_1d(cfg: ExperimentConfig, x: float, order: int = 4):
    """Raw perceptron moments at ``x``: quadrature when available, else Monte Carlo."""
    try:
        table = estimate_moments_quadrature(cfg.distribution, cfg.activation, [x], order, cfg.nodes)
    except QuadratureUnsupported:
        table = estimate_moments_mc(cfg.distribution, cfg.activation, [x], order,
                                    cfg.samples, cfg.seeds[0])
    return table


# ---- init-density -------------------------------------------------------------

def sample_outputs(dist, sigma, n: int, x: float, count: int, seed, chunk: int = 4096) -> np.ndarray:
    """``count`` independent width-``n`` network outputs at ``x``."""
    rng = make_rng(seed)
    out = np.empty(count)
    done = 0
    while done < count:
        m = min(chunk, count - done)
        w1, b1, w2, b2 = dist.sample_units(rng, (m, n))
        out[done:done + m] = np.sum(w2 * sigma(w1 * x + b1) + b2, axis=1) / math.sqrt(n)
        done += m
    return out


def silverman_bandwidth(values: np.ndarray) -> float:
    sd = float(np.std(values, ddof=1))
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * values.size ** (-0.2)


def density_comparison(values: np.ndarray, d: EdgeworthDensity1D, grid_size: int = 512) -> dict:
    """Kernel-density estimate against the three truncation levels.

    Each curve is convolved with the same Gaussian kernel before comparison, so the
    sup-norm distances measure model error plus sampling noise, not smoothing bias.
    """
    h = silverman_bandwidth(values)
    lo, hi = np.quantile(values, [0.0005, 0.9995])
    grid = np.linspace(lo - 3 * h, hi + 3 * h, grid_size)
    kde = gaussian_kde(values, bw_method=h / np.std(values, ddof=1))(grid)
    curves, smoothed, dist = {}, {}, {}
    for level in ("gaussian", "half", "one"):
        dl = d.with_order(level)
        curves[level] = edgeworth_density_1d(dl, grid)
        smoothed[level] = edgeworth_density_1d(dl.smoothed(h), grid)
        dist[level] = float(np.max(np.abs(kde - smoothed[level])))
    noise = np.sqrt(np.maximum(kde, 0.0) * KDE_ROUGHNESS / (values.size * h))
    return {"grid": grid, "kde": kde, "bandwidth": h, "curves": curves, "smoothed": smoothed,
            "distance": dist, "noise_floor": float(np.max(noise)),
            "half_vs_gaussian": float(np.max(np.abs(curves["half"] - curves["gaussian"])))}


def run_init_density(cfg: ExperimentConfig, threads: int = 1) -> Report:
    if not cfg.distribution.outer_zero_mean:
        raise ConfigError("distribution: W2 and b2 must have zero mean for the Gaussian limit")
    x = cfg.points[0]
    check_inputs([x], cfg.interval)
    mom = _moments_1d(cfg, x)
    mu2, mu3, mu4 = mom[(2,)], mom[(3,)], mom[(4,)]
    report = Report(cfg.kind)
    summary_rows = []

    def cell(n):
        values = sample_outputs(cfg.distribution, cfg.activation, n, x, cfg.samples, [cfg.seeds[0], n])
        return n, values, density_comparison(values, EdgeworthDensity1D(mu2, mu3, mu4, n))

    for n, values, cmp in run_cells(cell, cfg.widths, threads):
        edges = np.linspace(cmp["grid"][0], cmp["grid"][-1], 101)
        hist, _ = np.histogram(values, bins=edges, density=True)
        report.tables.append(Table(f"histogram_n{n}", ["bin_left", "bin_right", "density"],
                                   [(edges[i], edges[i + 1], hist[i]) for i in range(hist.size)]))
        g = cmp["grid"]
        cols = [cmp["kde"]] + [cmp["curves"][k] for k in ("gaussian", "half", "one")] + \
               [cmp["smoothed"][k] for k in ("gaussian", "half", "one")]
        report.tables.append(Table(
            f"density_n{n}",
            ["y", "kde", "gaussian", "edgeworth_half", "edgeworth_one",
             "gaussian_smoothed", "edgeworth_half_smoothed", "edgeworth_one_smoothed"],
            [(g[i], *(c[i] for c in cols)) for i in range(g.size)]))
        for level, dist in cmp["distance"].items():
            summary_rows.append((n, level, dist, cmp["noise_floor"], cmp["bandwidth"]))
        report.summary[f"n{n}"] = {"distance": cmp["distance"], "noise_floor": cmp["noise_floor"],
                                   "half_vs_gaussian": cmp["half_vs_gaussian"],
                                   "bandwidth": cmp["bandwidth"]}
        report.figures.append(Figure(
            f"density_n{n}", f"Output density at x={x}, n={n}", "y", "density",
            [Series(g.tolist(), cmp["curves"][k].tolist(), k) for k in ("gaussian", "half", "one")],
            histogram=(edges, hist)))
    report.tables.append(Table("density_distances",
                               ["n", "curve", "sup_distance", "noise_floor", "bandwidth"],
                               summary_rows))
    report.tables.append(Table("moments_used", ["multi_index", "value", "std_error", "provenance"],
                               mom.rows()))
    report.summary["moments"] = {"mu2": mu2, "mu3": mu3, "mu4": mu4}
    return report


# ---- ntk-drift ------------------------------------------------------------------

def run_ntk_drift(cfg: ExperimentConfig, threads: int = 1) -> Report:
    grid = np.asarray(cfg.points)
    check_inputs(grid, cfg.interval)
    sigma = cfg.activation
    K_inf = ntk_infinite_kernel(cfg.distribution, sigma, grid, nodes=cfg.nodes)
    report = Report(cfg.kind)
    report.tables.append(Table("ntk_infinite", ["i", "j", "z_i", "z_j", "value", "std_error"],
                               K_inf.rows()))
    tr = cfg.training
    data = TrainingSet(tr.X, tr.Y) if tr is not None else None
    times = [0.0]
    if data is not None:
        flow = linear_flow(cfg.distribution, sigma, data, data.Y, nodes=cfg.nodes)
        flow.require_invertible()
        lam = flow.lambda_inf
        times = list(np.linspace(0.0, tr.t_max / lam, tr.time_points))

    def cell(c):
        n, seed = c
        theta = sample_params(cfg.distribution, n, [seed, n])
        devs = [float(np.max(np.abs(ntk_finite_matrix(theta, sigma, grid) - K_inf.values)))]
        if data is not None:
            traj = integrate_gradient_flow(theta, sigma, data, times[-1], tr.tolerance, times)
            devs = [float(np.max(np.abs(ntk_finite_matrix(traj.theta_at(t), sigma, grid)
                                        - K_inf.values))) for t in times]
        return n, seed, devs

    results = run_cells(cell, [(n, s) for n in cfg.widths for s in cfg.seeds], threads)
    rows = [(n, seed, t, d) for n, seed, devs in results for t, d in zip(times, devs)]
    report.tables.append(Table("ntk_drift", ["n", "seed", "t", "sup_dev"], rows))
    medians = [float(np.median([devs[0] for m, _, devs in results if m == n])) for n in cfg.widths]
    slope = loglog_slope(cfg.widths, medians)
    report.tables.append(Table("ntk_drift_summary", ["n", "median_sup_dev_t0", "slope"],
                               [(n, m, slope) for n, m in zip(cfg.widths, medians)]))
    report.summary.update({"slope": slope, "slope_applicable": len(cfg.widths) > 1,
                           "medians": medians, "widths": cfg.widths})
    ref = [medians[0] * math.sqrt(cfg.widths[0] / n) for n in cfg.widths]
    report.figures.append(Figure("ntk_drift", "Finite vs infinite NTK at initialization",
                                 "width n", "median sup |NTK_n - NTK_inf|",
                                 [Series(cfg.widths, medians, "median over seeds", "o-"),
                                  Series(cfg.widths, ref, "n^-1/2 reference", "--")],
                                 loglog=True))
    return report


# ---- train-compare ------------------------------------------------------------

def run_train_compare(cfg: ExperimentConfig, threads: int = 1) -> Report:
    tr = cfg.training
    sigma = cfg.activation
    data = TrainingSet(tr.X, tr.Y)
    probes = np.asarray(tr.probes)
    check_inputs(np.concatenate([data.X, probes]), cfg.interval)
    base = linear_flow(cfg.distribution, sigma, data, data.Y, nodes=cfg.nodes)
    base.require_invertible()
    lam = base.lambda_inf
    times = np.linspace(0.0, tr.t_max / lam, tr.time_points)

    def cell(c):
        n, seed = c
        theta = sample_params(cfg.distribution, n, [seed, n])
        traj = integrate_gradient_flow(theta, sigma, data, times[-1], tr.tolerance, times)
        fp = traj.probe_outputs(probes)
        flow = LinearFlow(base.K, data.Y, traj.outputs[0], base.cross)
        rep = compare_outputs(fp, traj.outputs, flow, probes, times)
        return n, seed, rep

    results = run_cells(cell, [(n, s) for n in cfg.widths for s in cfg.seeds], threads)
    report = Report(cfg.kind)
    report.tables.append(Table("train_sweep", ["n", "seed", "sup_dev", "fitted_rate", "lambda_inf"],
                               [(n, s, r.sup_dev, r.fitted_rate, lam) for n, s, r in results]))
    report.tables.append(Table(
        "train_rates", ["n", "seed", "corollary_rate", "lambda_max", "loss_monotone"],
        [(n, s, r.corollary_rate, r.lambda_max, bool(np.all(np.diff(r.losses) <= 1e-12)))
         for n, s, r in results]))
    n_last, s_last, r_last = next(x for x in results if x[0] == cfg.widths[-1])
    header = ["t", "loss", "max_residual"] + [f"dev_x{i}" for i in range(probes.size)]
    report.tables.append(Table(
        f"trajectory_n{n_last}_seed{s_last}", header,
        [(t, r_last.losses[i], r_last.max_residuals[i], *r_last.deviations[i])
         for i, t in enumerate(times)]))
    medians = [float(np.median([r.sup_dev for m, _, r in results if m == n])) for n in cfg.widths]
    slope = loglog_slope(cfg.widths, medians)
    rates = {n: [r.fitted_rate for m, _, r in results if m == n] for n in cfg.widths}
    cor = {n: [r.corollary_rate for m, _, r in results if m == n] for n in cfg.widths}
    monotone = all(np.all(np.diff(r.losses) <= 1e-12) for _, _, r in results)
    report.summary.update({"slope": slope, "medians": medians, "widths": cfg.widths,
                           "lambda_inf": lam, "lambda_max": base.lambda_max,
                           "fitted_rates": rates, "corollary_rates": cor,
                           "loss_monotone": bool(monotone)})
    ref = [medians[0] * math.sqrt(cfg.widths[0] / n) for n in cfg.widths]
    report.figures.append(Figure("train_stability", "Finite vs infinite training outputs",
                                 "width n", "median sup |f_n - f_inf|",
                                 [Series(cfg.widths, medians, "median over seeds", "o-"),
                                  Series(cfg.widths, ref, "n^-1/2 reference", "--")],
                                 loglog=True))
    report.figures.append(Figure(f"residuals_n{n_last}", f"Training residual, n={n_last}",
                                 "t", "max residual",
                                 [Series(times.tolist(), r_last.max_residuals.tolist(),
                                         "max |f(X_i) - Y_i|")]))
    return report


# ---- measure-distance -----------------------------------------------------------

def run_measure_distance(cfg: ExperimentConfig, threads: int = 1) -> Report:
    tr, ms = cfg.training, cfg.measure
    data = TrainingSet(tr.X, tr.Y)
    extra = [p for p in cfg.raw.get("measure", {}).get("extra_probes", [])]
    check_inputs(np.concatenate([data.X, np.asarray(extra, dtype=float)]), cfg.interval)
    res: ScalingReport = width_scaling_experiment(
        cfg.distribution, cfg.activation, data, cfg.widths, ms.t, ms.atoms, ms.groups,
        cfg.seeds[0], tr.tolerance, cfg.nodes, extra)
    report = Report(cfg.kind)
    report.tables.append(Table("measure_distance", list(ScalingReport.COLUMNS),
                               [tuple(r[c] for c in ScalingReport.COLUMNS) for r in res.rows]))
    report.summary.update({"slope": res.slope, "lambda_inf": res.lambda_inf,
                           "above_baseline": bool(np.all(res.column("pi_fin_vs_inf")
                                                         > res.column("baseline_same_law")))})
    ns = [r["n"] for r in res.rows]
    labels = {"pi_fin_vs_inf": "finite vs infinite", "pi_fin_vs_interp": "finite vs interpolating",
              "pi_interp_vs_inf": "interpolating vs infinite", "baseline_same_law": "same-law baseline"}
    if ms.t > 0:
        report.figures.append(Figure("measure_distance", "Prokhorov distances", "width n",
                                     "distance", [Series(ns, res.column(c).tolist(), lab, "o-")
                                                  for c, lab in labels.items()], loglog=True))
    return report


# ---- moments ------------------------------------------------------------------

def run_moments(cfg: ExperimentConfig, threads: int = 1) -> Report:
    pts = cfg.points
    check_inputs(pts, cfg.interval)
    report = Report(cfg.kind)
    mc = estimate_moments_mc(cfg.distribution, cfg.activation, pts, cfg.max_order, cfg.samples,
                             cfg.seeds[0])
    tables = {"monte-carlo": mc}
    try:
        tables["quadrature"] = estimate_moments_quadrature(cfg.distribution, cfg.activation, pts,
                                                           cfg.max_order, cfg.nodes)
    except QuadratureUnsupported as exc:
        report.summary["quadrature"] = str(exc)
    exact = is_degenerate(cfg.distribution)
    mom_rows, cum_rows = [], []
    for tab in tables.values():
        mom_rows += tab.rows()
        cum_rows += moments_to_cumulants(tab).rows()
        if exact:
            break
    header = ["multi_index", "value", "std_error", "provenance"]
    report.tables.append(Table("moments", header, mom_rows))
    report.tables.append(Table("cumulants", header, cum_rows))
    if "quadrature" in tables and not exact:
        q = tables["quadrature"]
        z = {format_index(r): (mc[r] - q[r]) / mc.std_error(r) if mc.std_error(r) > 0 else 0.0
             for r in mc.indices()}
        report.summary["mc_vs_quadrature_max_z"] = float(max(abs(v) for v in z.values()))
    cum_mc = moments_to_cumulants(mc)
    odd = [abs(cum_mc[r]) / cum_mc.std_error(r) for r in cum_mc.indices()
           if sum(r) % 2 and cum_mc.std_error(r) > 0]
    report.summary["odd_cumulant_max_z"] = float(max(odd)) if odd else 0.0
    report.summary["outer_symmetric"] = cfg.distribution.outer_symmetric
    return report


RUNNERS = {
    "init-density": run_init_density,
    "ntk-drift": run_ntk_drift,
    "train-compare": run_train_compare,
    "measure-distance": run_measure_distance,
    "moments": run_moments,
}


def write_report(report: Report, cfg: ExperimentConfig, out_dir, fmt: str = "both",
                 wall_clock: float = 0.0) -> list[Path]:
    """Write CSVs and/or SVGs plus ``manifest.json``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    files: list[Path] = []
    if fmt in ("csv", "both"):
        for t in report.tables:
            path = out / f"{t.name}.csv"
            write_text(path, csv_text(t.header, t.rows, h))
            files.append(path)
    if fmt in ("svg", "both"):
        for fig in report.figures:
            files.append(write_svg(fig, out, h))
    (out / "config.json").write_text(cfg.canonical() + "\n")
    files.append(out / "config.json")
    files.append(write_manifest(out, h, files, wall_clock, report.summary))
    return files


def run_experiment(cfg: ExperimentConfig, out_dir, fmt: str = "both", threads: int = 1):
    start = time.perf_counter()
    report = RUNNERS[cfg.kind](cfg, threads)
    files = write_report(report, cfg, out_dir, fmt, time.perf_counter() - start)
    return report, files
