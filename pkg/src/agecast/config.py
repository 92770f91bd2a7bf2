"""Experiment configuration files (YAML, or JSON as an alternate encoding).

Schema::

    experiment: Solve | Oracle | Whittle | Simulate | Compare | CurveFTheta |
                ThresholdSweep | CostSweep | VarianceSweep | GapVsN
    seed: 0                       # the only source of randomness
    output: results/solve.json     # optional; --out wins
    system:
      num_users: 100
      update_prob: 0.2
      request_probs: 0.5          # scalar (all users) or list of num_users
      fetch_cost: 250
      cost: {kind: linear, c_a: 10}   # or cost_models: [<model>, ...]
      # or, instead of request_probs/cost, user classes splitting num_users
      # by share (largest remainder; ties go to the earlier class):
      # classes: [{share: 1, request_prob: 0.12, cost: {kind: linear, c_a: 15}}, ...]
    solver: {theta0, eps, alpha0, tau_max, tol}
    simulation: {horizon, warmup, cost_mode, policies, period}
    curve: {min, max, points}     # CurveFTheta
    sweep:                        # sweeps
      parameter: c_a              # num_users | update_prob | request_probs |
                                  # fetch_cost | c_a
      values: [1, 2, 3]           # or min/max/points (points evenly spaced)
      fetch_cost_per_user: 1.0    # optional: C_f = N * this at every point

A cost model is ``{kind: linear|quadratic|custom, c_a: x}`` or
``{kind: custom, table: [...]}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .cost_model import AgeCostModel, SystemParams, model_from_dict
from .errors import ConfigError

EXPERIMENTS = (
    "Solve",
    "Oracle",
    "Whittle",
    "Simulate",
    "Compare",
    "CurveFTheta",
    "ThresholdSweep",
    "CostSweep",
    "VarianceSweep",
    "GapVsN",
)
SWEEP_EXPERIMENTS = ("ThresholdSweep", "CostSweep", "VarianceSweep", "GapVsN")
SWEEP_PARAMETERS = ("num_users", "update_prob", "request_probs", "fetch_cost", "c_a")
POLICY_NAMES = ("optimal", "whittle", "always", "never", "periodic")

SOLVER_DEFAULTS = {"theta0": None, "eps": 1e-6, "alpha0": 0.1, "tau_max": 64, "tol": 1e-9}
SIM_DEFAULTS = {
    "horizon": 10**6,
    "warmup": None,
    "cost_mode": "expected",
    "policies": ["optimal", "whittle"],
    "period": 1,
}
CURVE_DEFAULTS = {"min": 50.0, "max": 400.0, "points": 351}


@dataclass
class ExperimentConfig:
    experiment: str
    system: SystemParams
    seed: int = 0
    output: str | None = None
    solver: dict = field(default_factory=lambda: dict(SOLVER_DEFAULTS))
    simulation: dict = field(default_factory=lambda: dict(SIM_DEFAULTS))
    curve: dict = field(default_factory=lambda: dict(CURVE_DEFAULTS))
    sweep: dict | None = None
    source: str | None = None
    classes: list | None = None

    def sweep_values(self) -> list:
        if self.sweep is None:
            return []
        return list(self.sweep["values"])

    def point(self, value) -> SystemParams:
        """System parameters at one sweep point."""
        return apply_sweep(self.system, self.sweep, value, self.classes)


def _require(d, key, path):
    if key not in d:
        raise ConfigError("missing required field", field=f"{path}.{key}" if path else key)
    return d[key]


def _number(x, path, lo=-math.inf, hi=math.inf, lo_open=False, integer=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"expected a number, got {x!r}", field=path)
    if integer and int(x) != x:
        raise ConfigError(f"expected an integer, got {x!r}", field=path)
    if not math.isfinite(x) or x < lo or x > hi or (lo_open and x == lo):
        left = "(" if lo_open else "["
        raise ConfigError(f"value {x!r} outside {left}{lo}, {hi}]", field=path)
    return int(x) if integer else float(x)


def parse_cost_model(d, path) -> AgeCostModel:
    if not isinstance(d, dict):
        raise ConfigError("cost model must be a mapping", field=path)
    kind = d.get("kind")
    if kind not in ("linear", "quadratic", "custom"):
        raise ConfigError(f"unknown cost kind {kind!r}", field=f"{path}.kind")
    if "table" in d:
        if kind != "custom":
            raise ConfigError("only custom models take a table", field=f"{path}.table")
        if not isinstance(d["table"], list) or not d["table"]:
            raise ConfigError("table must be a nonempty list", field=f"{path}.table")
        for j, x in enumerate(d["table"]):
            _number(x, f"{path}.table[{j}]", lo=0.0)
    elif "c_a" in d:
        _number(d["c_a"], f"{path}.c_a", lo=0.0)
    else:
        raise ConfigError("cost model needs c_a or table", field=path)
    try:
        return model_from_dict(d)
    except ValueError as exc:
        raise ConfigError(str(exc), field=path) from None


def parse_classes(raw) -> list:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("classes must be a nonempty list", field="system.classes")
    out = []
    for j, c in enumerate(raw):
        path = f"system.classes[{j}]"
        if not isinstance(c, dict):
            raise ConfigError("class must be a mapping", field=path)
        share = _number(c.get("share", 1), f"{path}.share", lo=0.0, lo_open=True)
        q = _number(_require(c, "request_prob", path), f"{path}.request_prob", 0.0, 1.0)
        model = parse_cost_model(_require(c, "cost", path), f"{path}.cost")
        out.append((share, q, model))
    return out


def split_classes(classes, N: int):
    """Per-user request probabilities and cost models for N users split by class share."""
    shares = np.array([c[0] for c in classes], dtype=float)
    exact = N * shares / shares.sum()
    counts = np.floor(exact).astype(int)
    order = sorted(range(len(classes)), key=lambda j: (-(exact[j] - counts[j]), j))
    for j in order[: N - counts.sum()]:
        counts[j] += 1
    qs, models = [], []
    for (_, q, model), n in zip(classes, counts):
        qs += [q] * int(n)
        models += [model] * int(n)
    return tuple(qs), tuple(models)


def parse_system(d) -> SystemParams:
    if not isinstance(d, dict):
        raise ConfigError("system must be a mapping", field="system")
    N = _number(_require(d, "num_users", "system"), "system.num_users", lo=1, integer=True)
    p = _number(_require(d, "update_prob", "system"), "system.update_prob", lo=0.0, hi=1.0, lo_open=True)
    C_f = _number(_require(d, "fetch_cost", "system"), "system.fetch_cost", lo=0.0)
    if "classes" in d:
        if "request_probs" in d or "cost" in d or "cost_models" in d:
            raise ConfigError("give either classes or request_probs/cost, not both", field="system.classes")
        qs, models = split_classes(parse_classes(d["classes"]), N)
        return SystemParams(N, p, qs, C_f, models)
    q_raw = _require(d, "request_probs", "system")
    if isinstance(q_raw, list):
        if len(q_raw) != N:
            raise ConfigError(f"expected {N} entries, got {len(q_raw)}", field="system.request_probs")
        qs = tuple(_number(x, f"system.request_probs[{i}]", 0.0, 1.0) for i, x in enumerate(q_raw))
    else:
        qs = (_number(q_raw, "system.request_probs", 0.0, 1.0),) * N
    if "cost_models" in d:
        raw = d["cost_models"]
        if not isinstance(raw, list) or len(raw) != N:
            raise ConfigError(f"expected a list of {N} cost models", field="system.cost_models")
        models = tuple(parse_cost_model(m, f"system.cost_models[{i}]") for i, m in enumerate(raw))
    else:
        models = (parse_cost_model(_require(d, "cost", "system"), "system.cost"),) * N
    return SystemParams(N, p, qs, C_f, models)


def _parse_knobs(d, defaults, path):
    if d is None:
        return dict(defaults)
    if not isinstance(d, dict):
        raise ConfigError("must be a mapping", field=path)
    unknown = set(d) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field=path)
    out = dict(defaults)
    out.update(d)
    return out


def _grid(d, path):
    if "values" in d:
        vals = d["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError("values must be a nonempty list", field=f"{path}.values")
        return [_number(v, f"{path}.values[{i}]") for i, v in enumerate(vals)]
    lo = _number(_require(d, "min", path), f"{path}.min")
    hi = _number(_require(d, "max", path), f"{path}.max")
    n = _number(_require(d, "points", path), f"{path}.points", lo=1, integer=True)
    if hi < lo:
        raise ConfigError("max must be >= min", field=f"{path}.max")
    return [float(x) for x in np.linspace(lo, hi, n)]


def parse_sweep(d) -> dict:
    if not isinstance(d, dict):
        raise ConfigError("sweep must be a mapping", field="sweep")
    param = _require(d, "parameter", "sweep")
    if param not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown parameter {param!r}; expected one of {SWEEP_PARAMETERS}", field="sweep.parameter")
    values = _grid(d, "sweep")
    if param == "num_users":
        values = [_number(v, "sweep.values", lo=1, integer=True) for v in values]
    out = {"parameter": param, "values": values}
    if "fetch_cost_per_user" in d:
        out["fetch_cost_per_user"] = _number(d["fetch_cost_per_user"], "sweep.fetch_cost_per_user", lo=0.0)
    return out


def apply_sweep(system: SystemParams, sweep: dict | None, value, classes=None) -> SystemParams:
    if sweep is None:
        return system
    param = sweep["parameter"]
    try:
        if param == "c_a":
            models = tuple(_with_coefficient(m, value) for m in system.cost_models)
            params = system.replace(cost_models=models)
        elif param == "num_users" and classes is not None:
            qs, models = split_classes(classes, int(value))
            params = SystemParams(int(value), system.p, qs, system.C_f, models)
        elif param == "num_users":
            if not system.homogeneous():
                raise ConfigError("num_users sweeps need identical users", field="sweep.parameter")
            params = system.replace(num_users=int(value))
        else:
            params = system.replace(**{param: value})
        if "fetch_cost_per_user" in sweep:
            params = params.replace(fetch_cost=params.N * sweep["fetch_cost_per_user"])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{exc} at value {value!r}", field="sweep.values") from None
    return params


def _with_coefficient(model: AgeCostModel, c_a: float) -> AgeCostModel:
    if model.kind == "custom":
        raise ConfigError("c_a sweeps need linear or quadratic costs", field="sweep.parameter")
    return AgeCostModel(model.kind, c_a=float(c_a))


def parse_config(d, source: str | None = None) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping at top level")
    known = {"experiment", "seed", "output", "system", "solver", "simulation", "curve", "sweep", "description"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field="<root>")
    exp = d.get("experiment", "Solve")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}", field="experiment")
    seed = _number(d.get("seed", 0), "seed", lo=0, hi=2**64 - 1, integer=True)
    system = parse_system(_require(d, "system", ""))
    solver = _parse_knobs(d.get("solver"), SOLVER_DEFAULTS, "solver")
    sim = _parse_knobs(d.get("simulation"), SIM_DEFAULTS, "simulation")
    _number(sim["horizon"], "simulation.horizon", lo=1, integer=True)
    if sim["cost_mode"] not in ("expected", "realized"):
        raise ConfigError("cost_mode must be expected or realized", field="simulation.cost_mode")
    for i, name in enumerate(sim["policies"]):
        if name not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {name!r}", field=f"simulation.policies[{i}]")
    curve = _parse_knobs(d.get("curve"), CURVE_DEFAULTS, "curve")
    curve_values = _grid(curve, "curve")
    sweep = parse_sweep(d["sweep"]) if d.get("sweep") is not None else None
    if exp in SWEEP_EXPERIMENTS and exp != "ThresholdSweep" and sweep is None:
        raise ConfigError(f"{exp} needs a sweep section", field="sweep")
    cfg = ExperimentConfig(
        experiment=exp,
        system=system,
        seed=seed,
        output=d.get("output"),
        solver=solver,
        simulation=sim,
        curve={"values": curve_values, **curve},
        sweep=sweep,
        source=source,
        classes=parse_classes(d["system"]["classes"]) if "classes" in d["system"] else None,
    )
    if sweep is not None:
        for v in sweep["values"]:
            cfg.point(v)  # surface invalid sweep points before any work starts
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", field=str(path)) from None
    try:
        if path.suffix == ".json":
            d = json.loads(text)
        else:
            d = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"parse error: {exc}", field=str(path)) from None
    return parse_config(d, source=str(path))
