"""Experiment runners behind the CLI, plus the randomized self-test battery.

Every runner returns a list of :class:`Artifact` objects and a list of
one-line summaries.  CSV artifacts have a fixed header and format every real
number with 17 significant digits so reruns diff cleanly.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .cost_model import AgeCostModel, SystemParams, binom_pmf_vector
from .errors import AgecastError
from .mdp_oracle import extract_config_thresholds, extract_thresholds, solve_oracle
from .simulator import (
    AlwaysFetch,
    NeverFetch,
    PeriodicFetch,
    SimConfig,
    ThresholdPolicyAdapter,
    WhittlePolicyAdapter,
    compare_policies,
    simulate,
)
from .threshold_solver import MAX_ENUMERATED_USERS, f_curve, solve_heterogeneous, solve_homogeneous
from .whittle import build_table, wi_thresholds_homogeneous

SIM_HEADER = (
    "num_users",
    "update_prob",
    "request_probs",
    "fetch_cost",
    "cost",
    "policy",
    "avg_cost",
    "ci95",
    "fetch_rate",
    "interval_mean",
    "interval_var",
    "theta",
    "rel_gap",
)


@dataclass
class Artifact:
    """One output: ``kind`` is "csv" (header + rows) or "json" (payload)."""

    kind: str
    header: tuple = ()
    rows: list = field(default_factory=list)
    payload: dict | None = None
    suffix: str = ""  # appended to the output stem for secondary artifacts


def fmt(x) -> str:
    """Fixed CSV number format: integers verbatim, reals with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def jsonable(x):
    """inf/nan become None (JSON null); numpy scalars become Python numbers."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


# -- helpers -------------------------------------------------------------------

def solve_optimal(params: SystemParams, solver: dict):
    """Optimal policy for identical or (small) heterogeneous users; returns (policy, trace or None)."""
    kw = dict(eps=solver["eps"], alpha0=solver["alpha0"], theta0=solver["theta0"])
    if params.homogeneous():
        return solve_homogeneous(params, **kw)
    return solve_heterogeneous(params, **kw), None


def make_policy(name: str, params: SystemParams, solver: dict, period: int = 1):
    if name == "optimal":
        return ThresholdPolicyAdapter(solve_optimal(params, solver)[0])
    if name == "whittle":
        return WhittlePolicyAdapter(build_table(params), params.C_f)
    if name == "always":
        return AlwaysFetch()
    if name == "never":
        return NeverFetch()
    if name == "periodic":
        return PeriodicFetch(period)
    raise ValueError(f"unknown policy {name!r}")


def sim_config(cfg: ExperimentConfig, params: SystemParams) -> SimConfig:
    s = cfg.simulation
    return SimConfig(params, horizon=int(s["horizon"]), seed=cfg.seed, warmup=s["warmup"], cost_mode=s["cost_mode"])


def _instance_cols(params: SystemParams):
    qs = sorted(set(params.request_probs))
    q_col = fmt(qs[0]) if len(qs) == 1 else ";".join(fmt(q) for q in params.request_probs)
    costs = []
    for m in params.cost_models:
        d = m.to_dict()
        label = f"{d['kind']}:{fmt(d['c_a'])}" if "c_a" in d else "custom:" + "/".join(fmt(x) for x in d["table"])
        if label not in costs:
            costs.append(label)
    return [fmt(params.N), fmt(params.p), q_col, fmt(params.C_f), ";".join(costs)]


def _try_theta(params, solver):
    if not params.homogeneous() and params.N > MAX_ENUMERATED_USERS:
        return math.nan
    try:
        return solve_optimal(params, solver)[0].theta
    except AgecastError:
        return math.nan


def _sim_rows(cfg: ExperimentConfig, params: SystemParams, names):
    theta = _try_theta(params, cfg.solver)
    policies = [make_policy(n, params, cfg.solver, cfg.simulation["period"]) for n in names]
    reports = compare_policies(sim_config(cfg, params), policies)
    rows, lines = [], []
    for name, rep in zip(names, reports):
        gap = (rep.avg_cost - theta) / theta if theta and math.isfinite(theta) else math.nan
        rows.append(
            _instance_cols(params)
            + [name]
            + [fmt(x) for x in (rep.avg_cost, rep.ci95_halfwidth, rep.fetch_rate,
                                rep.fetch_interval_mean, rep.fetch_interval_variance, theta, gap)]
        )
        lines.append(
            f"N={params.N} C_f={fmt(params.C_f)} {name}: avg_cost={rep.avg_cost:.6g} "
            f"+/- {rep.ci95_halfwidth:.3g} interval_var={rep.fetch_interval_variance:.4g} gap={gap:.4g}"
        )
    return rows, lines


def _map(fn, items, jobs):
    """Ordered map, in a process pool when ``jobs > 1``."""
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- experiments -------------------------------------------------------------

def run_solve(cfg: ExperimentConfig, jobs=1):
    params = cfg.system
    policy, trace = solve_optimal(params, cfg.solver)
    payload = {"theta": policy.theta, "thresholds": list(policy.thresholds), "iterations": policy.iterations}
    if trace is not None:
        payload["trace"] = [{"iteration": i, "theta": t, "f_theta": f} for i, (t, f) in enumerate(trace.steps)]
        payload["converged"] = trace.converged
    if policy.heterogeneous:
        payload["config_thresholds"] = {str(k): v for k, v in sorted(policy.config_thresholds.items())}
        payload["rank_masks"] = list(policy.rank_masks)
    line = f"theta={policy.theta:.10g} thresholds={_short(policy.thresholds)}"
    return [Artifact("json", payload=jsonable(payload))], [line]


def run_oracle(cfg: ExperimentConfig, jobs=1):
    sol = solve_oracle(cfg.system, tau_max=int(cfg.solver["tau_max"]), tol=cfg.solver["tol"])
    payload = {
        "theta": sol.theta,
        "tau_max": sol.tau_max,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "truncation_suspect": sol.truncation_suspect,
    }
    if sol.heterogeneous:
        payload["config_thresholds"] = {str(k): v for k, v in extract_config_thresholds(sol).items()}
    else:
        payload["thresholds"] = extract_thresholds(sol, cfg.system.N)
    line = f"theta={sol.theta:.10g} tau_max={sol.tau_max} suspect={sol.truncation_suspect}"
    return [Artifact("json", payload=jsonable(payload))], [line]


def run_whittle(cfg: ExperimentConfig, jobs=1, tau_max=None):
    params = cfg.system
    table = build_table(params)
    # identical users share one index function; list it once
    users = [0] if params.homogeneous() else list(range(params.N))
    rows = []
    for i in users:
        upto = tau_max or table.tau_cap(i)
        for t, g in enumerate(table.column(i, upto), start=1):
            rows.append([fmt(i), fmt(t), fmt(float(g))])
    arts = [Artifact("csv", ("user", "tau", "g_value"), rows)]
    line = f"index tables for {len(users)} user(s)"
    if params.homogeneous():
        thr = wi_thresholds_homogeneous(table, params.C_f, params.N)
        arts.append(Artifact("csv", ("m", "tau"), [[fmt(m), fmt(t)] for m, t in enumerate(thr, 1)], suffix="thresholds"))
        line += f"; thresholds={_short(thr)}"
    return arts, [line]


def run_simulate(cfg: ExperimentConfig, jobs=1, policy="optimal"):
    params = cfg.system
    pol = make_policy(policy, params, cfg.solver, cfg.simulation["period"])
    rep = simulate(sim_config(cfg, params), pol)
    payload = {"policy": policy, "seed": cfg.seed, "horizon": int(cfg.simulation["horizon"]),
               "cost_mode": cfg.simulation["cost_mode"], **rep.to_dict(), "system": params.to_dict()}
    payload["policy"] = policy
    line = f"{policy}: avg_cost={rep.avg_cost:.8g} +/- {rep.ci95_halfwidth:.3g}"
    return [Artifact("json", payload=jsonable(payload))], [line]


def run_compare(cfg: ExperimentConfig, jobs=1):
    rows, lines = _sim_rows(cfg, cfg.system, cfg.simulation["policies"])
    return [Artifact("csv", SIM_HEADER, rows)], lines


def run_curve(cfg: ExperimentConfig, jobs=1):
    thetas = np.asarray(cfg.curve["values"], dtype=float)
    f = f_curve(cfg.system, thetas)
    rows = [[fmt(t), fmt(v)] for t, v in zip(thetas, f)]
    mono = bool(np.all(np.diff(f) <= 0))
    return [Artifact("csv", ("theta", "f_theta"), rows)], [f"{len(rows)} points, nonincreasing={mono}"]


def run_threshold_sweep(cfg: ExperimentConfig, jobs=1):
    params = cfg.system
    if not params.homogeneous():
        raise ValueError("ThresholdSweep needs identical users")
    policy, trace = solve_homogeneous(
        params, theta0=cfg.solver["theta0"], eps=cfg.solver["eps"], alpha0=cfg.solver["alpha0"]
    )
    rows = []
    for it, ((theta, _), thr) in enumerate(zip(trace.steps, trace.thresholds)):
        for m, t in enumerate(thr, start=1):
            rows.append([fmt(it), fmt(theta), fmt(m), fmt(t)])
    lines = [f"iteration {i}: theta={s[0]:.8g} thresholds={_short(t)}" for i, (s, t) in enumerate(zip(trace.steps, trace.thresholds))]
    return [Artifact("csv", ("iteration", "theta", "m", "threshold"), rows)], lines


def _cost_point(args):
    cfg, value = args
    params = cfg.point(value)
    policy, _ = solve_optimal(params, cfg.solver)
    rows = [[cfg.sweep["parameter"], fmt(value), fmt(policy.theta), fmt(m), fmt(t)]
            for m, t in enumerate(policy.thresholds, start=1)]
    line = f"{cfg.sweep['parameter']}={value:g}: theta={policy.theta:.8g} thresholds={_short(policy.thresholds)}"
    return rows, [line]


def run_cost_sweep(cfg: ExperimentConfig, jobs=1):
    out = _map(_cost_point, [(cfg, v) for v in cfg.sweep_values()], jobs)
    rows = [r for rs, _ in out for r in rs]
    lines = [l for _, ls in out for l in ls]
    return [Artifact("csv", ("parameter", "value", "theta", "m", "threshold"), rows)], lines


def _sim_point(args):
    cfg, value, names = args
    return _sim_rows(cfg, cfg.point(value), names)


def run_variance_sweep(cfg: ExperimentConfig, jobs=1):
    out = _map(_sim_point, [(cfg, v, ["optimal"]) for v in cfg.sweep_values()], jobs)
    return [Artifact("csv", SIM_HEADER, [r for rs, _ in out for r in rs])], [l for _, ls in out for l in ls]


def run_gap_vs_n(cfg: ExperimentConfig, jobs=1):
    names = cfg.simulation["policies"]
    out = _map(_sim_point, [(cfg, v, names) for v in cfg.sweep_values()], jobs)
    return [Artifact("csv", SIM_HEADER, [r for rs, _ in out for r in rs])], [l for _, ls in out for l in ls]


RUNNERS = {
    "Solve": run_solve,
    "Oracle": run_oracle,
    "Whittle": run_whittle,
    "Simulate": run_simulate,
    "Compare": run_compare,
    "CurveFTheta": run_curve,
    "ThresholdSweep": run_threshold_sweep,
    "CostSweep": run_cost_sweep,
    "VarianceSweep": run_variance_sweep,
    "GapVsN": run_gap_vs_n,
}


def run_experiment(cfg: ExperimentConfig, jobs=1, **kw):
    return RUNNERS[cfg.experiment](cfg, jobs=jobs, **kw)


def _short(seq, k=6):
    seq = [fmt(x) for x in seq]
    return "[" + ", ".join(seq[:k]) + (", ...]" if len(seq) > k else "]")


# -- self-test ---------------------------------------------------------------

def random_instances(seed: int = 2024, count: int = 20) -> list:
    """Small random homogeneous instances for the solver/oracle agreement check."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        N = int(rng.integers(1, 6))
        p = float(rng.uniform(0.1, 0.9))
        q = float(rng.uniform(0.05, 0.9))
        kind = "linear" if rng.random() < 0.5 else "quadratic"
        c_a = float(rng.uniform(0.5, 5.0))
        C_f = float(rng.uniform(1.0, 50.0))
        out.append(SystemParams.uniform(N, p, q, C_f, AgeCostModel(kind, c_a=c_a)))
    return out


def oracle_agreement(params: SystemParams, rtol: float = 1e-3):
    """(ok, detail) for solver-vs-oracle agreement on one homogeneous instance."""
    policy, _ = solve_homogeneous(params)
    sol = solve_oracle(params)
    thr_o = extract_thresholds(sol, params.N)
    rel = abs(policy.theta - sol.theta) / max(abs(sol.theta), 1e-300)
    ok = rel <= rtol and list(policy.thresholds) == thr_o and not sol.truncation_suspect
    detail = (f"theta {policy.theta:.9g} vs {sol.theta:.9g} (rel {rel:.2e}); "
              f"thresholds {list(policy.thresholds)} vs {thr_o}; suspect={sol.truncation_suspect}")
    return ok, detail


def selftest(seed: int = 2024, horizon: int = 20_000):
    """Run the oracle-agreement suite and trivial-case batteries; returns [(name, ok, detail)]."""
    results = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, reported not raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))

    for k, params in enumerate(random_instances(seed)):
        check(f"oracle agreement #{k:02d} (N={params.N})", lambda params=params: oracle_agreement(params))

    lin = AgeCostModel.linear(2.0)

    def no_requests():
        pol, _ = solve_homogeneous(SystemParams.uniform(3, 0.5, 0.0, 10.0, lin))
        rep = simulate(SimConfig(SystemParams.uniform(3, 0.5, 0.0, 10.0, lin), horizon, seed), NeverFetch())
        return pol.theta == 0.0 and rep.avg_cost == 0.0, f"theta={pol.theta}, never-fetch cost={rep.avg_cost}"

    def free_fetch():
        pol, _ = solve_homogeneous(SystemParams.uniform(3, 0.5, 0.4, 0.0, lin))
        return pol.theta == 0.0 and set(pol.thresholds) == {1}, f"theta={pol.theta}, thresholds={pol.thresholds}"

    def always_fetch():
        params = SystemParams.uniform(2, 0.5, 1.0, 7.0, lin)
        rep = simulate(SimConfig(params, horizon, seed), AlwaysFetch())
        return rep.avg_cost == 7.0, f"avg_cost={rep.avg_cost}"

    def periodic_variance():
        params = SystemParams.uniform(2, 0.5, 0.5, 7.0, lin)
        rep = simulate(SimConfig(params, horizon, seed), PeriodicFetch(4))
        return rep.fetch_interval_variance == 0.0 and rep.fetch_interval_mean == 4.0, f"variance={rep.fetch_interval_variance}"

    def pmf_sums():
        worst = max(abs(binom_pmf_vector(n, q).sum() - 1.0) for n in (1, 10, 100, 2000) for q in (0.01, 0.5, 0.99))
        return worst < 1e-12, f"max |sum - 1| = {worst:.2e}"

    def reproducible():
        params = SystemParams.uniform(4, 0.4, 0.3, 12.0, lin)
        pol = ThresholdPolicyAdapter(solve_homogeneous(params)[0])
        a = simulate(SimConfig(params, horizon, seed, cost_mode="realized"), pol)
        b = simulate(SimConfig(params, horizon, seed, cost_mode="realized"), pol)
        return a == b, f"avg_cost={a.avg_cost!r} twice"

    check("no requests: theta 0, never-fetch cost 0", no_requests)
    check("free fetch: theta 0, thresholds 1", free_fetch)
    check("always fetch with certain requests costs C_f", always_fetch)
    check("periodic fetch has zero interval variance", periodic_variance)
    check("binomial pmf sums to 1", pmf_sums)
    check("simulation reproducible under a fixed seed", reproducible)
    return results
