"""Brute-force reference solutions by relative value iteration on a truncated state space.

States are ``(tau, m)`` (homogeneous) or ``(tau, s)`` with ``s`` a request
bitmask (heterogeneous), ``tau = 1..tau_max``.  Idling at ``tau_max`` stays at
``tau_max``.  The expected single-stage cost is ``C_f`` for a fetch and the
requesters' expected age cost otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost_model import SystemParams, binom_pmf_vector
from .errors import NonThreshold, NotConverged, RefuseTooLarge
from .threshold_solver import MAX_ENUMERATED_USERS, NEVER

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITERS = 200_000


@dataclass
class OracleSolution:
    """Converged RVI output.

    ``h[tau - 1, j]`` is the relative cost of state ``(tau, j)`` where ``j`` is
    the request count (homogeneous) or the request bitmask (heterogeneous).
    ``policy`` has the same layout, True meaning fetch.
    """

    theta: float
    h: np.ndarray
    policy: np.ndarray
    iterations: int
    residual: float
    tau_max: int
    next_probs: np.ndarray
    heterogeneous: bool = False
    truncation_suspect: bool = False

    @property
    def h_av(self) -> np.ndarray:
        """Expected relative cost over the next request draw, indexed by tau - 1."""
        return self.h @ self.next_probs

    def thresholds(self) -> list:
        return extract_thresholds(self, self.h.shape[1] - 1)


def _rvi(idle_cost, next_probs, C_f, tol, max_iters, kappa):
    # idle_cost: (T, K) expected age cost of idling; next_probs: (K,)
    T, K = idle_cost.shape
    h = np.zeros((T, K))
    residual = math.inf
    theta = 0.0
    for it in range(1, max_iters + 1):
        hav = h @ next_probs
        hav_next = np.append(hav[1:], hav[-1])
        Th = np.minimum(C_f + hav[0], idle_cost + hav_next[:, None])
        w = (1.0 - kappa) * h + kappa * Th
        theta = w[0, 0] / kappa
        h_new = w - w[0, 0]
        diff = h_new - h
        residual = float(diff.max() - diff.min())
        h = h_new
        if residual <= tol:
            return theta, h, it, residual
    raise NotConverged(
        f"relative value iteration did not reach tol={tol} in {max_iters} sweeps",
        residual=residual,
        iterations=max_iters,
    )


def _greedy(h, idle_cost, next_probs, C_f, tie_rtol):
    hav = h @ next_probs
    hav_next = np.append(hav[1:], hav[-1])
    q_fetch = C_f + hav[0]
    q_idle = idle_cost + hav_next[:, None]
    slack = tie_rtol * max(1.0, abs(q_fetch))
    return q_fetch <= q_idle + slack


def _suspect(sol: OracleSolution) -> bool:
    first = _first_fetch(sol.policy)
    finite = first[np.isfinite(first)]
    if finite.size and float(finite.max()) >= sol.tau_max - 2:
        return True
    # a requesting class that never fetches while cost accrues is a cap artefact
    return bool(sol.theta > 0 and not np.isfinite(first[1:]).all())


def _first_fetch(policy: np.ndarray) -> np.ndarray:
    any_fetch = policy.any(axis=0)
    first = np.argmax(policy, axis=0).astype(float) + 1.0
    first[~any_fetch] = NEVER
    return first


def rvi_homogeneous(
    params: SystemParams,
    tau_max: int,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    kappa: float = 0.5,
    tie_rtol: float = 1e-7,
) -> OracleSolution:
    """Relative value iteration over ``(tau, m)``, m the number of requests.

    ``kappa`` mixes each Bellman update with the previous iterate (an
    aperiodicity transform); it changes the iterates but not the solution.
    """
    if not params.homogeneous():
        raise ValueError("params are not homogeneous")
    if tau_max < 10:
        raise ValueError("tau_max must be at least 10")
    if tol <= 0:
        raise ValueError("tol must be positive")
    N = params.N
    B = binom_pmf_vector(N, params.q)
    cbar = params.cost_model.expected(params.p, np.arange(1, tau_max + 1))
    idle = cbar[:, None] * np.arange(N + 1)[None, :]
    theta, h, it, res = _rvi(idle, B, params.C_f, tol, max_iters, kappa)
    policy = _greedy(h, idle, B, params.C_f, tie_rtol)
    sol = OracleSolution(theta, h, policy, it, res, tau_max, B)
    sol.truncation_suspect = _suspect(sol)
    return sol


def rvi_heterogeneous(
    params: SystemParams,
    tau_max: int,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    kappa: float = 0.5,
    tie_rtol: float = 1e-7,
) -> OracleSolution:
    """Relative value iteration over ``(tau, s)``, s the request bitmask."""
    N = params.N
    if N > MAX_ENUMERATED_USERS:
        raise RefuseTooLarge(f"N={N} exceeds {MAX_ENUMERATED_USERS} users")
    if tau_max < 10:
        raise ValueError("tau_max must be at least 10")
    if tol <= 0:
        raise ValueError("tol must be positive")
    masks = np.arange(2**N)
    bits = ((masks[:, None] >> np.arange(N)) & 1).astype(float)
    q = np.asarray(params.request_probs)
    probs = np.prod(np.where(bits == 1, q, 1.0 - q), axis=1)
    taus = np.arange(1, tau_max + 1)
    cbar = np.column_stack([m.expected(params.p, taus) for m in params.cost_models])
    idle = cbar @ bits.T
    theta, h, it, res = _rvi(idle, probs, params.C_f, tol, max_iters, kappa)
    policy = _greedy(h, idle, probs, params.C_f, tie_rtol)
    sol = OracleSolution(theta, h, policy, it, res, tau_max, probs, heterogeneous=True)
    sol.truncation_suspect = _suspect(sol)
    return sol


def extract_thresholds(sol: OracleSolution, N: int) -> list:
    """Smallest fetching tau for m = 1..N (NEVER when the policy never fetches)."""
    if sol.heterogeneous:
        raise ValueError("use extract_config_thresholds for heterogeneous solutions")
    out = []
    for m in range(1, N + 1):
        out.append(_column_threshold(sol.policy[:, m], m))
    return out


def extract_config_thresholds(sol: OracleSolution) -> dict:
    """Threshold per request bitmask for a heterogeneous solution."""
    return {
        mask: _column_threshold(sol.policy[:, mask], mask)
        for mask in range(sol.policy.shape[1])
    }


def _column_threshold(col: np.ndarray, label) -> float:
    if not col.any():
        return NEVER
    first = int(np.argmax(col))
    if not col[first:].all():
        raise NonThreshold(f"policy for request class {label} is not monotone in tau")
    return first + 1


def solve_oracle(params: SystemParams, tau_max: int = 64, max_tau_max: int = 1 << 15, **kw):
    """Run the oracle, doubling ``tau_max`` until it is at least 4x the largest threshold."""
    hetero = not params.homogeneous()
    run = rvi_heterogeneous if hetero else rvi_homogeneous
    tau_max = max(tau_max, 10)
    while True:
        sol = run(params, tau_max, **kw)
        first = _first_fetch(sol.policy)
        finite = first[np.isfinite(first)]
        largest = float(finite.max()) if finite.size else NEVER
        unbounded = any(
            m.expected_limit(params.p) == math.inf for m in params.cost_models
        )
        need_more = (
            (math.isfinite(largest) and tau_max < 4 * largest)
            or (not math.isfinite(largest) and unbounded and params.C_f > 0
                and any(q > 0 for q in params.request_probs))
        )
        if not need_more or tau_max * 2 > max_tau_max:
            return sol
        tau_max *= 2
