"""Experiment configuration: a TOML file plus command-line overrides.

Schema (every key optional unless noted; defaults depend on the experiment)::

    kind = "init-density"            # init-density | ntk-drift | train-compare |
                                     # measure-distance | moments
    activation = "tanh"              # tanh | sigmoid | logistic | softplus | relu | identity
    points = [1.0]                   # evaluation / probe points
    widths = [128, 256]              # ascending
    seeds = [0, 1, 2]                # distinct
    samples = 100000                 # Monte Carlo draws
    max_order = 4                    # moment tables
    nodes = 64                       # quadrature nodes per dimension
    interval = [-1.0, 1.0]           # inputs outside it only warn

    [distribution]                   # one table per coordinate, or "all"
    all = { kind = "normal", mean = 0.0, std = 1.0 }
    W2 = { kind = "centered_gamma", shape = 0.5, scale = 1.0, sign = 1 }

    [training]
    X = [-1.0, 0.0, 1.0]
    Y = [0.5, -0.3, 0.8]
    t_max = 8.0                      # in units of 1 / lambda_inf
    time_points = 81
    tolerance = 1e-8
    probes = 17                      # grid size on the interval, or an explicit list

    [measure]
    atoms = 512
    groups = 16
    t = 2.0                          # in units of 1 / lambda_inf

Laws: ``point {value}``, ``uniform {low, high}``, ``normal {mean, std}``,
``centered_gamma {shape, scale, sign}``, ``discrete {values, probs}``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .activations import ACTIVATIONS, Activation, get_activation
from .distributions import ParamDistribution

KINDS = ("init-density", "ntk-drift", "train-compare", "measure-distance", "moments")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


DEFAULTS: dict = {
    "init-density": {
        "activation": "sigmoid",
        "distribution": {"all": {"kind": "uniform", "low": -0.5, "high": 0.5}},
        "points": [1.0],
        "widths": [2000],
        "seeds": [0],
        "samples": 80_000,
        "nodes": 96,
    },
    "ntk-drift": {
        "activation": "tanh",
        "distribution": {"all": {"kind": "normal", "mean": 0.0, "std": 1.0}},
        "points": 9,
        "widths": [128, 256, 512, 1024, 2048, 4096, 8192],
        "seeds": list(range(64)),
        "nodes": 96,
    },
    "train-compare": {
        "activation": "tanh",
        "distribution": {"all": {"kind": "normal", "mean": 0.0, "std": 1.0}},
        "widths": [128, 256, 512, 1024, 2048, 4096, 8192],
        "seeds": list(range(16)),
        "nodes": 96,
        "training": {"X": [-1.0, 0.0, 1.0], "Y": [0.5, -0.3, 0.8], "t_max": 8.0,
                     "time_points": 81, "tolerance": 1e-8, "probes": 17},
    },
    "measure-distance": {
        "activation": "softplus",
        "distribution": {
            "W1": {"kind": "normal", "mean": 0.0, "std": 1.0},
            "b1": {"kind": "normal", "mean": 0.0, "std": 1.0},
            "W2": {"kind": "centered_gamma", "shape": 0.5, "scale": 2 ** 0.5},
            "b2": {"kind": "point", "value": 0.0},
        },
        "widths": [128, 256, 512, 1024, 2048],
        "seeds": [0],
        "nodes": 96,
        "training": {"X": [0.5], "Y": [10.0], "tolerance": 1e-7},
        "measure": {"atoms": 512, "groups": 16, "t": 2.0},
    },
    "moments": {
        "activation": "tanh",
        "distribution": {"all": {"kind": "uniform", "low": -0.5, "high": 0.5}},
        "points": [-0.5, 0.5],
        "seeds": [0],
        "samples": 200_000,
        "max_order": 4,
        "nodes": 64,
    },
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "distribution":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class TrainingSpec:
    X: list
    Y: list
    t_max: float = 8.0
    time_points: int = 81
    tolerance: float = 1e-8
    probes: list = field(default_factory=list)


@dataclass
class MeasureSpec:
    atoms: int = 512
    groups: int = 16
    t: float = 2.0


@dataclass
class ExperimentConfig:
    kind: str
    activation_name: str
    distribution: ParamDistribution
    points: list
    widths: list
    seeds: list
    samples: int
    max_order: int
    nodes: int
    interval: tuple
    training: TrainingSpec | None
    measure: MeasureSpec | None
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def activation(self) -> Activation:
        return get_activation(self.activation_name)

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _grid(spec, interval, name):
    if isinstance(spec, int) and not isinstance(spec, bool):
        if spec < 1:
            raise ConfigError(f"{name}: grid size must be >= 1")
        lo, hi = interval
        return [lo + (hi - lo) * i / (spec - 1) for i in range(spec)] if spec > 1 else [0.5 * (lo + hi)]
    try:
        return [float(v) for v in spec]
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a list of numbers or a grid size") from None


def _int_list(value, name):
    try:
        out = [int(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a list of integers") from None
    return out


def _positive_int(raw, key, minimum=1):
    value = raw.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"{key}: expected an integer >= {minimum}, got {value!r}")
    return value


def build_config(kind: str, data: dict | None = None) -> ExperimentConfig:
    """Merge defaults for ``kind`` with ``data`` and validate."""
    data = dict(data or {})
    kind = data.pop("kind", kind) if kind is None else kind
    if kind not in KINDS:
        raise ConfigError(f"kind: unknown experiment {kind!r}; choose from {KINDS}")
    raw = _merge(DEFAULTS[kind], data)
    raw["kind"] = kind
    raw.setdefault("interval", [-1.0, 1.0])
    raw.setdefault("samples", 100_000)
    raw.setdefault("max_order", 4)
    raw.setdefault("nodes", 64)
    raw.setdefault("points", [0.5])

    name = raw.get("activation")
    if not isinstance(name, str) or name.lower() not in ACTIVATIONS:
        raise ConfigError(f"activation: unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")
    try:
        dist = ParamDistribution.from_dict(raw["distribution"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"distribution: {exc}") from None

    try:
        interval = tuple(float(v) for v in raw["interval"])
    except (TypeError, ValueError):
        raise ConfigError("interval: expected two numbers") from None
    if len(interval) != 2 or not interval[0] < interval[1]:
        raise ConfigError("interval: expected [low, high] with low < high")

    points = _grid(raw["points"], interval, "points")
    if not points:
        raise ConfigError("points: at least one point is required")
    widths = _int_list(raw.get("widths", [1]), "widths")
    if not widths or any(w < 1 for w in widths):
        raise ConfigError("widths: need at least one width, all >= 1")
    if widths != sorted(widths) or len(set(widths)) != len(widths):
        raise ConfigError("widths: must be strictly ascending")
    seeds = _int_list(raw.get("seeds", [0]), "seeds")
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: must be a non-empty list of distinct integers")
    samples = _positive_int(raw, "samples")
    max_order = _positive_int(raw, "max_order", 2)
    if max_order > 6:
        raise ConfigError("max_order: at most 6")
    nodes = _positive_int(raw, "nodes")

    training = None
    if "training" in raw:
        t = raw["training"]
        try:
            training = TrainingSpec(
                X=[float(v) for v in t["X"]], Y=[float(v) for v in t["Y"]],
                t_max=float(t.get("t_max", 8.0)), time_points=int(t.get("time_points", 81)),
                tolerance=float(t.get("tolerance", 1e-8)),
                probes=_grid(t.get("probes", 17), interval, "training.probes"))
        except KeyError as exc:
            raise ConfigError(f"training.{exc.args[0]}: required") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"training: {exc}") from None
        if len(training.X) != len(training.Y) or not training.X:
            raise ConfigError("training.Y: must match training.X in length")
        if len(set(training.X)) != len(training.X):
            raise ConfigError("training.X: inputs must be distinct")
        if training.t_max <= 0 or training.time_points < 2 or training.tolerance <= 0:
            raise ConfigError("training: t_max, tolerance must be positive and time_points >= 2")
    elif kind in ("train-compare", "measure-distance"):
        raise ConfigError("training: section required for this experiment")

    measure = None
    if "measure" in raw:
        m = raw["measure"]
        try:
            measure = MeasureSpec(int(m.get("atoms", 512)), int(m.get("groups", 16)),
                                  float(m.get("t", 2.0)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"measure: {exc}") from None
        if measure.atoms < 1 or measure.groups < 1 or measure.t < 0:
            raise ConfigError("measure: atoms, groups must be >= 1 and t >= 0")

    return ExperimentConfig(kind, name.lower(), dist, points, widths, seeds, samples,
                            max_order, nodes, interval, training, measure, raw)


def load_config(path: str | Path | None, kind: str, overrides: dict | None = None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: cannot parse {path}: {exc}") from None
    file_kind = data.pop("kind", None)
    if file_kind is not None and file_kind != kind:
        raise ConfigError(f"kind: config is for {file_kind!r}, not {kind!r}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(kind, data)
