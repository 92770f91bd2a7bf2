import math

import numpy as np
import pytest

from agecast import (
    NEVER,
    AgeCostModel,
    NonThreshold,
    NotConverged,
    RefuseTooLarge,
    SystemParams,
    extract_config_thresholds,
    extract_thresholds,
    rvi_heterogeneous,
    rvi_homogeneous,
    solve_oracle,
)
from agecast.mdp_oracle import OracleSolution
from oracles import full_scan_threshold, homogeneous_classes, monotone_vectors, threshold_policy_cost

GOLDEN = SystemParams.uniform(2, 0.5, 0.3, 5.0, AgeCostModel.linear(1.0))
GOLDEN_THETA = 1.3134349915  # exhaustive threshold search below


def test_golden_instance_against_exhaustive_policy_search():
    cbar = lambda t: 0.5 * t
    best = min(
        (threshold_policy_cost(5.0, cbar, homogeneous_classes(2, 0.3, v)), v)
        for v in monotone_vectors(2, 20)
    )
    assert best[0] == pytest.approx(GOLDEN_THETA, abs=1e-9)
    sol = rvi_homogeneous(GOLDEN, tau_max=400)
    assert sol.theta == pytest.approx(best[0], rel=1e-7)
    assert extract_thresholds(sol, 2) == best[1] == [6, 3]
    assert not sol.truncation_suspect


def test_reference_state_is_zero_and_residual_within_tol():
    sol = rvi_homogeneous(GOLDEN, tau_max=64, tol=1e-10)
    assert sol.h[0, 0] == 0.0
    assert sol.residual <= 1e-10


def test_zero_age_cost_means_free_idling():
    params = SystemParams.uniform(3, 0.5, 0.4, 10.0, AgeCostModel.linear(0.0))
    sol = rvi_homogeneous(params, tau_max=20)
    assert sol.theta == pytest.approx(0.0, abs=1e-12)
    assert not sol.policy.any()
    assert extract_thresholds(sol, 3) == [NEVER] * 3


def test_no_requests_costs_nothing():
    params = SystemParams.uniform(3, 0.5, 0.0, 10.0, AgeCostModel.linear(2.0))
    assert rvi_homogeneous(params, tau_max=20).theta == pytest.approx(0.0, abs=1e-12)


def test_single_user_threshold_matches_renewal_scan():
    # q = 1, c_a p = 1, C_f = 2: ratios 2, 1.5, 5/3 at tau = 1, 2, 3
    params = SystemParams(1, 1.0, (1.0,), 2.0, (AgeCostModel.linear(1.0),))
    sol = rvi_heterogeneous(params, tau_max=20)
    assert extract_config_thresholds(sol)[1] == 2
    assert full_scan_threshold(1.0, lambda t: t, 2.0, 50) == 2
    assert sol.theta == pytest.approx(1.5, rel=1e-8)


@pytest.mark.parametrize("q", [0.3, 0.7])
def test_single_user_matches_renewal_scan_for_q_below_one(q):
    model = AgeCostModel.quadratic(0.4)
    params = SystemParams(1, 0.6, (q,), 9.0, (model,))
    sol = solve_oracle(params)
    cbar = lambda t: model.expected(0.6, t)
    assert extract_thresholds(sol, 1) == [full_scan_threshold(q, cbar, 9.0, 500)]


def test_free_fetch_fetches_on_any_request():
    params = SystemParams((2), 0.5, (0.3, 0.6), 0.0, (AgeCostModel.linear(1.0),) * 2)
    sol = rvi_heterogeneous(params, tau_max=12)
    assert sol.theta == pytest.approx(0.0, abs=1e-12)
    thr = extract_config_thresholds(sol)
    # with nothing to lose, ties resolve toward fetching in every configuration
    assert all(thr[m] == 1 for m in (1, 2, 3))


def test_heterogeneous_formulation_agrees_on_identical_users():
    params = SystemParams.uniform(2, 0.4, 0.35, 6.0, AgeCostModel.quadratic(0.5))
    a = rvi_homogeneous(params, tau_max=64)
    b = rvi_heterogeneous(params, tau_max=64)
    assert a.theta == pytest.approx(b.theta, abs=1e-8)
    thr = extract_config_thresholds(b)
    assert [thr[1], thr[3]] == extract_thresholds(a, 2)
    assert thr[1] == thr[2]


def test_heterogeneous_refuses_large_instances():
    params = SystemParams.uniform(13, 0.4, 0.35, 6.0, AgeCostModel.linear(1.0))
    params = params.replace(request_probs=tuple(0.1 + 0.01 * i for i in range(13)))
    with pytest.raises(RefuseTooLarge):
        rvi_heterogeneous(params, tau_max=16)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        rvi_homogeneous(GOLDEN, tau_max=9)
    with pytest.raises(ValueError):
        rvi_homogeneous(GOLDEN, tau_max=20, tol=0.0)
    with pytest.raises(NotConverged) as err:
        rvi_homogeneous(GOLDEN, tau_max=64, max_iters=3)
    assert err.value.iterations == 3 and err.value.residual > 0


def test_truncation_flag_raised_when_tau_max_too_small():
    params = SystemParams.uniform(1, 0.1, 0.2, 50.0, AgeCostModel.linear(0.5))
    assert rvi_homogeneous(params, tau_max=10).truncation_suspect
    assert not solve_oracle(params).truncation_suspect


def test_solve_oracle_grows_tau_max_past_four_thresholds():
    sol = solve_oracle(GOLDEN, tau_max=10)
    assert sol.tau_max >= 4 * max(extract_thresholds(sol, 2))


def test_non_threshold_policy_detected():
    policy = np.zeros((12, 2), dtype=bool)
    policy[3, 1] = True  # fetches at tau = 4 only
    sol = OracleSolution(0.0, np.zeros((12, 2)), policy, 1, 0.0, 12, np.array([0.5, 0.5]))
    with pytest.raises(NonThreshold):
        extract_thresholds(sol, 1)


@pytest.mark.parametrize(
    "params",
    [
        GOLDEN,
        SystemParams.uniform(4, 0.3, 0.2, 20.0, AgeCostModel.quadratic(1.0)),
        SystemParams.uniform(5, 0.8, 0.6, 3.0, AgeCostModel.linear(0.7)),
    ],
    ids=["golden", "quadratic", "cheap-fetch"],
)
def test_structural_properties(params):
    sol = solve_oracle(params)
    N = params.N
    thr = extract_thresholds(sol, N)
    assert all(a >= b for a, b in zip(thr, thr[1:]))
    assert not sol.policy[:, 0].any()
    assert np.all(sol.h <= sol.h[0][None, :] + params.C_f + 1e-8)
    hav = sol.h_av
    assert np.all(np.diff(hav) >= -1e-8)
    t1 = int(thr[0])
    flat = hav[t1 - 1 : sol.tau_max - 3]
    assert np.ptp(flat) <= 1e-6
    # the extracted policy's exact cost is the oracle's theta
    exact = threshold_policy_cost(params.C_f, lambda t: params.cost_model.expected(params.p, t),
                                  homogeneous_classes(N, params.q, thr))
    assert exact == pytest.approx(sol.theta, rel=1e-7)


def test_kappa_does_not_change_solution():
    a = rvi_homogeneous(GOLDEN, tau_max=64, kappa=0.5)
    b = rvi_homogeneous(GOLDEN, tau_max=64, kappa=0.9)
    assert a.theta == pytest.approx(b.theta, abs=1e-8)
    assert (a.policy == b.policy).all()
    assert math.isfinite(a.theta)
