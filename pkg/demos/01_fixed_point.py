"""Optimal fetching for 100 identical users via the fixed point theta = f(theta).

Each slot every user requests the content with probability 0.5 and the source
produces a new version with probability 0.2.  Serving a copy that is v versions
old costs each requester 10 v; fetching costs 250.  The optimal policy fetches
once the time since the last fetch reaches a threshold that shrinks with the
number of requesters.
"""
import numpy as np

from agecast import AgeCostModel, SystemParams, f_curve, solve_homogeneous

params = SystemParams.uniform(100, update_prob=0.2, request_prob=0.5, fetch_cost=250.0,
                              cost_model=AgeCostModel.linear(10.0))

policy, trace = solve_homogeneous(params)
print(f"optimal average cost theta = {policy.theta:.4f} after {len(trace.steps)} evaluations of f")
print("thresholds for m = 1..10 requesters:", policy.thresholds[:10])
print("smallest m that triggers a fetch at tau = 1:", policy.thresholds.index(1) + 1)

# f is nonincreasing, so it crosses the diagonal exactly once
thetas = np.linspace(50, 400, 8)
for theta, f in zip(thetas, f_curve(params, thetas)):
    side = "above" if f > theta else "below"
    print(f"  f({theta:6.1f}) = {f:8.3f}  ({side} the diagonal)")
