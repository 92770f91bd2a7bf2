"""Whittle-index thresholds against the optimal ones for 50 identical users.

Each user on their own would fetch at the minimiser of a renewal-reward
ratio.  The index g(tau) is the fetch price at which that user becomes
indifferent about waiting past tau.  The index policy fetches when the
requesters' indices add up to more than the fetch cost.  With many
requesters both policies agree.
"""
from agecast import (
    AgeCostModel,
    SystemParams,
    build_table,
    solve_homogeneous,
    wi_thresholds_homogeneous,
)

params = SystemParams.uniform(50, 0.7, 0.12, 50.0, AgeCostModel.linear(10.0))
table = build_table(params)
print("g(tau) for tau = 1..8:", [round(table.g(0, t), 3) for t in range(1, 9)])

wi = wi_thresholds_homogeneous(table, params.C_f, params.N)
opt = list(solve_homogeneous(params)[0].thresholds)
print(" m  whittle  optimal")
for m in range(1, 13):
    print(f"{m:2d}  {wi[m - 1]:7}  {opt[m - 1]:7}")
same_from = next(m for m in range(params.N) if wi[m:] == opt[m:]) + 1
print(f"identical for every m >= {same_from}")
