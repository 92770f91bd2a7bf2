"""Certify the threshold solver against brute-force relative value iteration.

The oracle solves the full average-cost MDP on a truncated state space without
assuming any structure.  Agreement of both the cost and the thresholds is
evidence that the fast solver is right.
"""
from agecast import AgeCostModel, SystemParams, extract_thresholds, solve_homogeneous, solve_oracle

instances = {
    "two users, linear": SystemParams.uniform(2, 0.5, 0.3, 5.0, AgeCostModel.linear(1.0)),
    "five users, quadratic": SystemParams.uniform(5, 0.4, 0.2, 30.0, AgeCostModel.quadratic(0.5)),
    "ten users, linear": SystemParams.uniform(10, 0.3, 0.1, 100.0, AgeCostModel.linear(10.0)),
}

for name, params in instances.items():
    policy, _ = solve_homogeneous(params, eps=1e-9)
    sol = solve_oracle(params)
    oracle_thr = extract_thresholds(sol, params.N)
    print(f"{name}:")
    print(f"  solver theta {policy.theta:.8f}  thresholds {list(policy.thresholds)}")
    print(f"  oracle theta {sol.theta:.8f}  thresholds {oracle_thr}  (state space tau <= {sol.tau_max})")
    print(f"  agree: {list(policy.thresholds) == oracle_thr}")
