"""Three classes of users with different request rates and age sensitivities.

Configurations of requesters are ranked by their total age-cost weight, and
each rank gets its own threshold.  The exact MDP oracle confirms the result,
and the Whittle-index policy comes close to it in simulation.
"""
from agecast import (
    AgeCostModel,
    SimConfig,
    SystemParams,
    WhittlePolicyAdapter,
    build_table,
    rvi_heterogeneous,
    simulate,
    solve_heterogeneous,
)

qs = (0.12,) * 4 + (0.3,) * 3 + (0.9,) * 3
costs = tuple(AgeCostModel.linear(c) for c in (15,) * 4 + (13,) * 3 + (10,) * 3)
params = SystemParams(10, 0.7, qs, 80.0, costs)

policy = solve_heterogeneous(params)
print(f"optimal average cost {policy.theta:.4f} over {len(policy.rank_masks)} ranked configurations")
print("thresholds of the 5 heaviest configurations:", policy.thresholds[-5:])

small = SystemParams(3, 0.7, (0.12, 0.3, 0.9), 40.0, costs[3:6])
print(f"3-user check: solver {solve_heterogeneous(small).theta:.6f} "
      f"vs oracle {rvi_heterogeneous(small, tau_max=256).theta:.6f}")

rep = simulate(SimConfig(params, horizon=300_000, seed=2), WhittlePolicyAdapter(build_table(params), params.C_f))
print(f"Whittle index policy: {rep.avg_cost:.4f} +/- {rep.ci95_halfwidth:.4f} "
      f"({100 * (rep.avg_cost - policy.theta) / policy.theta:+.2f}% vs optimal)")
