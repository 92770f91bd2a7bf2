"""The nine acceptance criteria, each at its stated tolerance.

Every test records one ``[PASS]``/``[FAIL]`` line (echoed in the terminal
summary) before asserting, so a failing criterion is still reported.
"""
import csv
import io
import json
import math
import time

import numpy as np
import pytest

from agecast import (
    AgeCostModel,
    SimConfig,
    SystemParams,
    ThresholdPolicyAdapter,
    WhittlePolicyAdapter,
    build_table,
    compare_policies,
    extract_config_thresholds,
    extract_thresholds,
    rvi_heterogeneous,
    simulate,
    solve_heterogeneous,
    solve_homogeneous,
    solve_oracle,
    whittle_index,
    wi_decide,
)
from agecast.cli import main
from agecast.experiments import random_instances

FIXED_POINT = SystemParams.uniform(100, 0.2, 0.5, 250.0, AgeCostModel.linear(10.0))
FIXED_POINT_YAML = """\
experiment: Solve
system:
  num_users: 100
  update_prob: 0.2
  request_probs: 0.5
  fetch_cost: 250
  cost: {kind: linear, c_a: 10}
"""


def test_criterion_1_fixed_point(tmp_path, acceptance_line):
    cfg = tmp_path / "fixed_point.yaml"
    cfg.write_text(FIXED_POINT_YAML)
    start = time.perf_counter()
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "solve.json")]) == 0
    assert main(["curve-ftheta", "--config", str(cfg), "--out", str(tmp_path / "curve.csv"),
                 "--min", "50", "--max", "400", "--points", "351"]) == 0
    elapsed = time.perf_counter() - start
    theta = json.loads((tmp_path / "solve.json").read_text())["theta"]
    rows = list(csv.DictReader(io.StringIO((tmp_path / "curve.csv").read_text())))
    f = [float(r["f_theta"]) for r in rows]
    monotone = all(b <= a for a, b in zip(f, f[1:]))
    ok = abs(theta - 174.5) <= 0.5 and monotone and len(f) == 351 and elapsed < 5.0
    acceptance_line(1, ok, f"theta={theta:.4f} (174.5 +/- 0.5), f nonincreasing on 351 points={monotone}, {elapsed:.2f}s (< 5 s)")
    assert ok


def test_criterion_2_oracle_equivalence(acceptance_line):
    start = time.perf_counter()
    worst, bad = 0.0, []
    for k, params in enumerate(random_instances(seed=2024, count=20)):
        policy, _ = solve_homogeneous(params)
        sol = solve_oracle(params)
        rel = abs(policy.theta - sol.theta) / sol.theta
        worst = max(worst, rel)
        if rel > 1e-3 or list(policy.thresholds) != extract_thresholds(sol, params.N) or sol.truncation_suspect:
            bad.append(k)
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 120
    acceptance_line(2, ok, f"20 instances, worst rel gap {worst:.1e} (<= 1e-3), mismatches {bad}, {elapsed:.1f}s (< 120 s)")
    assert ok


def structural_violations(params):
    sol = solve_oracle(params)
    thr = extract_thresholds(sol, params.N)
    out = []
    if any(a < b for a, b in zip(thr, thr[1:])):
        out.append("thresholds not monotone in m")
    if sol.policy[:, 0].any():
        out.append("fetches with no requests")
    if np.any(sol.h > sol.h[0][None, :] + params.C_f + 1e-8):
        out.append("h exceeds h(1, m) + C_f")
    hav = sol.h_av
    if np.any(np.diff(hav) < -1e-8):
        out.append("h_av decreasing")
    t1 = int(thr[0])
    if np.ptp(hav[t1 - 1 : sol.tau_max - 3]) > 1e-6:
        out.append("h_av not flat beyond tau(1)")
    return out


def test_criterion_3_structural_invariants(acceptance_line):
    start = time.perf_counter()
    instances = random_instances(seed=2024, count=20) + [
        SystemParams.uniform(10, 0.3, 0.1, 100.0, AgeCostModel.linear(10.0)),
        SystemParams.uniform(10, 0.6, 0.4, 100.0, AgeCostModel.linear(10.0)),
        SystemParams.uniform(8, 0.7, 0.12, 40.0, AgeCostModel.quadratic(1.0)),
    ]
    failures = {k: v for k, p in enumerate(instances) if (v := structural_violations(p))}
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60
    acceptance_line(3, ok, f"{len(instances)} instances, violations {failures or 'none'}, {elapsed:.1f}s (< 60 s)")
    assert ok


def test_criterion_4_simulation_consistency(acceptance_line):
    start = time.perf_counter()
    policy, _ = solve_homogeneous(FIXED_POINT, eps=1e-9)
    pol = ThresholdPolicyAdapter(policy)
    exp = simulate(SimConfig(FIXED_POINT, horizon=10**6, seed=0, cost_mode="expected"), pol)
    real = simulate(SimConfig(FIXED_POINT, horizon=10**6, seed=0, cost_mode="realized"), pol)
    elapsed = time.perf_counter() - start
    rel = abs(exp.avg_cost - policy.theta) / policy.theta
    joint = math.hypot(exp.ci95_halfwidth, real.ci95_halfwidth)
    ok = rel <= 0.02 and abs(exp.avg_cost - real.avg_cost) <= joint and elapsed < 30
    acceptance_line(
        4, ok,
        f"expected {exp.avg_cost:.3f} vs theta {policy.theta:.3f} (rel {rel:.1e} <= 2%); "
        f"realized {real.avg_cost:.3f}, |diff| {abs(exp.avg_cost - real.avg_cost):.3f} <= joint CI {joint:.3f}; {elapsed:.1f}s (< 30 s)",
    )
    assert ok


def alpha_independence(rng):
    worst = 0.0
    consistent = True
    for _ in range(20):
        N = int(rng.integers(2, 6))
        params = SystemParams(
            N, float(rng.uniform(0.2, 0.9)), tuple(rng.uniform(0.1, 0.9, N)), float(rng.uniform(5, 50)),
            tuple(AgeCostModel.linear(float(c)) for c in rng.uniform(0.5, 5.0, N)),
        )
        table = build_table(params, tau_cap=64)
        tau = int(rng.integers(1, 40))
        s = rng.integers(0, 2, N)
        decision = wi_decide(table, params.C_f, tau, s)
        sums = []
        for _ in range(5):
            alpha = rng.dirichlet(np.ones(N))
            sums.append(sum(whittle_index(table, i, tau, int(s[i]), alpha[i] * params.C_f) for i in range(N)))
            consistent &= (bool(s.any()) and sums[-1] > 0) == decision
        worst = max(worst, float(np.ptp(sums)))
    return worst, consistent


def single_user_agreement(q):
    params = SystemParams(1, 0.6, (q,), 7.3, (AgeCostModel.linear(0.8),))
    thr = extract_config_thresholds(rvi_heterogeneous(params, tau_max=400))[1]
    table = build_table(params)
    return all(wi_decide(table, params.C_f, tau, [1]) == (tau >= thr) for tau in range(1, 201))


def test_criterion_5_whittle_correctness(acceptance_line):
    spread, consistent = alpha_independence(np.random.default_rng(5))
    a_ok = spread <= 1e-9 and consistent
    b_ok = all(single_user_agreement(q) for q in (0.3, 1.0))
    c_parts = []
    c_ok = True
    for N in (2, 5):
        params = SystemParams.uniform(N, 0.4, 1.0, 15.0, AgeCostModel.linear(1.0))
        theta = solve_homogeneous(params, eps=1e-10)[0].theta
        # q = 1 makes the expected-cost stream deterministic; realized mode gives a meaningful CI
        rep = simulate(SimConfig(params, horizon=10**6, seed=0, cost_mode="realized"),
                       WhittlePolicyAdapter(build_table(params), params.C_f))
        inside = abs(rep.avg_cost - theta) <= rep.ci95_halfwidth
        c_ok &= inside
        c_parts.append(f"N={N} {rep.avg_cost:.4f} vs {theta:.4f} +/- {rep.ci95_halfwidth:.4f}")
    ok = a_ok and b_ok and c_ok
    acceptance_line(5, ok, f"(a) index-sum spread {spread:.1e} (<= 1e-9); (b) N=1 WI == oracle on tau <= 200: {b_ok}; (c) {'; '.join(c_parts)}")
    assert ok


def test_criterion_6_wi_suboptimality(acceptance_line):
    start = time.perf_counter()
    gaps = []
    for C_f in (500.0, 1000.0, 2000.0, 3000.0):
        params = SystemParams.uniform(1000, 0.7, 0.12, C_f, AgeCostModel.linear(10.0))
        theta = solve_homogeneous(params)[0].theta
        rep = simulate(SimConfig(params, horizon=10**6, seed=0), WhittlePolicyAdapter(build_table(params), C_f))
        gaps.append((rep.avg_cost - theta) / theta)
    elapsed = time.perf_counter() - start
    ok = all(g <= 0.10 for g in gaps) and elapsed < 300
    acceptance_line(6, ok, "WI gap at C_f 500/1000/2000/3000: " + ", ".join(f"{100 * g:.2f}%" for g in gaps) + f" (<= 10%), {elapsed:.1f}s (< 300 s)")
    assert ok


def test_criterion_7_asymptotic_trend(acceptance_line):
    var, gap = {}, {}
    for N in (100, 2000):
        params = SystemParams.uniform(N, 0.7, 0.12, float(N), AgeCostModel.linear(10.0))
        policy, _ = solve_homogeneous(params)
        opt, wi = compare_policies(
            SimConfig(params, horizon=10**6, seed=0),
            [ThresholdPolicyAdapter(policy), WhittlePolicyAdapter(build_table(params), params.C_f)],
        )
        var[N] = opt.fetch_interval_variance
        gap[N] = (wi.avg_cost - opt.avg_cost) / opt.avg_cost
    ok = var[2000] < var[100] and gap[2000] < gap[100]
    acceptance_line(
        7, ok,
        f"(a) interval variance {var[100]:.4f} -> {var[2000]:.4f}; (b) WI gap {100 * gap[100]:.3f}% -> {100 * gap[2000]:.3f}% (N 100 -> 2000)",
    )
    assert ok


HETEROGENEOUS = [
    SystemParams(2, 0.5, (0.2, 0.6), 6.0, (AgeCostModel.linear(1.0), AgeCostModel.linear(3.0))),
    SystemParams(3, 0.7, (0.12, 0.3, 0.9), 40.0,
                 (AgeCostModel.linear(15.0), AgeCostModel.linear(13.0), AgeCostModel.linear(10.0))),
]


def test_criterion_8_heterogeneous_consistency(acceptance_line):
    parts = []
    ok = True
    for params in HETEROGENEOUS:
        policy = solve_heterogeneous(params)
        sol = rvi_heterogeneous(params, tau_max=512)
        rel = abs(policy.theta - sol.theta) / sol.theta
        rep = simulate(SimConfig(params, horizon=10**6, seed=0), WhittlePolicyAdapter(build_table(params), params.C_f))
        wi_gap = abs(rep.avg_cost - policy.theta) / policy.theta
        ok &= rel <= 1e-3 and wi_gap <= 0.15 and not sol.truncation_suspect
        parts.append(f"N={params.N}: solver vs oracle rel {rel:.1e}, WI within {100 * wi_gap:.2f}%")
    acceptance_line(8, ok, "; ".join(parts) + " (limits 1e-3 and 15%)")
    assert ok


SENSITIVITY_Q = (0.2, 0.4, 0.6, 0.8)


def sensitivity_thresholds():
    out = []
    for q in SENSITIVITY_Q:
        params = SystemParams.uniform(10, 0.6, q, 100.0, AgeCostModel.linear(10.0))
        out.append(list(solve_homogeneous(params, eps=1e-9)[0].thresholds))
    return out


@pytest.mark.xfail(
    strict=True,
    reason="thresholds rise with q on this setup; the exact oracle confirms it (see the ledger)",
)
def test_criterion_9_thresholds_nonincreasing_in_q(acceptance_line):
    thr = sensitivity_thresholds()
    ok = all(thr[j + 1][m] <= thr[j][m] for j in range(len(SENSITIVITY_Q) - 1) for m in range(10))
    rows = "; ".join(f"q={q}: {t[:4]}" for q, t in zip(SENSITIVITY_Q, thr))
    acceptance_line(9, ok, f"tau(m) nonincreasing in q for every m: {ok} ({rows} ...)")
    assert ok


def test_sensitivity_thresholds_are_nondecreasing_in_q_and_confirmed_by_oracle():
    """The direction the model actually exhibits, certified by the exact oracle."""
    thr = sensitivity_thresholds()
    assert all(thr[j + 1][m] >= thr[j][m] for j in range(len(SENSITIVITY_Q) - 1) for m in range(10))
    assert any(thr[j + 1][m] > thr[j][m] for j in range(len(SENSITIVITY_Q) - 1) for m in range(10))
    for q, t in zip(SENSITIVITY_Q, thr):
        params = SystemParams.uniform(10, 0.6, q, 100.0, AgeCostModel.linear(10.0))
        assert extract_thresholds(solve_oracle(params), 10) == t
