"""Optimal threshold policies via the damped fixed-point iteration on the average cost.

For a candidate average cost ``theta`` one backward sweep over the time since
the last fetch yields the largest threshold, the relative cost differences
``g(tau) = h_av(tau) - h_av(1)`` and a new estimate ``f(theta)``.  The optimal
cost is the unique fixed point of ``f``; because ``f`` is nonincreasing the
residual ``f(theta) - theta`` is strictly decreasing, which lets the solver keep
a bisection bracket next to the damped iteration.

The sweep is written over *request classes* sorted by their age-cost weight.
For homogeneous users the class is the number of requests ``m``; for
heterogeneous users it is the rank of the request configuration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cost_model import AgeCostModel, SystemParams, binom_pmf_vector, inverse_avg_age_cost
from .errors import NoBracket, NonProportionalCosts, RefuseTooLarge

NEVER = math.inf
MAX_ENUMERATED_USERS = 12


@dataclass(frozen=True)
class RequestClasses:
    """Request classes sorted by age-cost weight.

    ``weights[r] * base(tau)`` is the expected age cost of class ``r`` at time
    ``tau``; ``probs[r]`` is its probability in any slot.  Classes with zero
    weight never justify a fetch and are pooled at the front.
    """

    weights: np.ndarray
    probs: np.ndarray
    base: AgeCostModel
    p: float
    masks: tuple = ()

    @property
    def n_zero(self) -> int:
        return int(np.count_nonzero(self.weights <= 0.0))

    @property
    def n_active(self) -> int:
        return len(self.weights) - self.n_zero


class FTheta(NamedTuple):
    f_value: float
    thresholds: tuple
    g_table: dict
    degenerate: bool


@dataclass
class FixedPointTrace:
    steps: list = field(default_factory=list)  # (theta, f(theta))
    thresholds: list = field(default_factory=list)  # thresholds at each theta
    alpha: float = 0.1
    converged: bool = False
    bisection_steps: int = 0


@dataclass(frozen=True)
class ThresholdPolicy:
    """Optimal average cost and fetch thresholds.

    Homogeneous: ``thresholds[m-1]`` is the threshold with ``m`` requests.
    Heterogeneous: ``thresholds[r-1]`` is the threshold of active rank ``r``
    and ``config_thresholds`` maps each request bitmask to its threshold.
    """

    theta: float
    thresholds: tuple
    g_table: dict
    iterations: int = 0
    config_thresholds: dict | None = None
    rank_masks: tuple = ()

    @property
    def heterogeneous(self) -> bool:
        return self.config_thresholds is not None

    def threshold_for(self, s) -> float:
        s = np.asarray(s)
        if self.config_thresholds is None:
            m = int(s.sum())
            return NEVER if m == 0 else self.thresholds[m - 1]
        return self.config_thresholds[mask_of(s)]

    def decide(self, tau: int, s) -> bool:
        return tau >= self.threshold_for(s)


def mask_of(s) -> int:
    return int(sum(1 << i for i, b in enumerate(s) if b))


def _sweep(theta: float, classes: RequestClasses, C_f: float) -> FTheta:
    w, P = classes.weights, classes.probs
    z = classes.n_zero
    M = classes.n_active
    p0 = float(P[:z].sum())
    # prefix sums over "every class up to active rank m", zero classes included
    Pc = np.concatenate(([p0], p0 + np.cumsum(P[z:])))
    Kc = np.concatenate(([0.0], np.cumsum(P[z:] * w[z:])))
    wa = np.concatenate(([0.0], w[z:]))  # wa[m] is the weight of active rank m

    y = theta / (1.0 - p0)
    tau1 = inverse_avg_age_cost(classes.base.scaled(wa[1]), classes.p, y)
    g = C_f - y
    g_table = {tau1: g}
    thr = [NEVER] * (M + 1)
    base = classes.base.expected(classes.p, np.arange(1, tau1 + 1))  # base[t-1]

    if tau1 == 1:
        thr[1:] = [1] * M
        f = Pc[0] * g + (1.0 - Pc[0]) * C_f
        return FTheta(float(f), tuple(thr[1:]), g_table, True)

    m = 1
    thr[1] = tau1
    tau = tau1
    while tau > 1:
        b_prev = base[tau - 2]
        while m < M and g <= C_f - wa[m + 1] * b_prev:
            m += 1
            thr[m] = tau
        if tau > 2:
            g = C_f - theta + Pc[m] * (g - C_f) + Kc[m] * b_prev
            g_table[tau - 1] = g
        else:
            for k in range(m + 1, M + 1):
                thr[k] = 1
        tau -= 1
    if thr[M] > 1:
        f = Kc[M] * base[0] + g
    else:
        f = Pc[m] * g + Kc[m] * base[0] + (1.0 - Pc[m]) * C_f
    return FTheta(float(f), tuple(thr[1:]), dict(sorted(g_table.items())), False)


def homogeneous_classes(params: SystemParams) -> RequestClasses:
    if not params.homogeneous():
        raise ValueError("params are not homogeneous")
    N = params.N
    return RequestClasses(
        weights=np.arange(N + 1, dtype=float),
        probs=binom_pmf_vector(N, params.q),
        base=params.cost_model,
        p=params.p,
    )


def _scale_factor(model: AgeCostModel, base: AgeCostModel) -> float | None:
    """w with model == w * base, or None if no such w exists."""
    L = max(len(model.table), len(base.table), 1) + 3
    v = np.arange(L)
    a = np.asarray(model.cost(v), dtype=float)
    b = np.asarray(base.cost(v), dtype=float)
    j = int(np.argmax(b))
    if b[j] == 0.0:
        return 0.0 if not a.any() else None
    w = a[j] / b[j]
    if np.allclose(a, w * b, rtol=1e-9, atol=1e-12 * max(1.0, float(b.max()))):
        return float(w)
    return None


def configuration_classes(params: SystemParams) -> RequestClasses:
    """Enumerate all 2^N request configurations ranked by age-cost weight."""
    N = params.N
    if N > MAX_ENUMERATED_USERS:
        raise RefuseTooLarge(f"N={N} exceeds {MAX_ENUMERATED_USERS} users")
    nonzero = [m for m in params.cost_models if not m.is_zero()]
    base = nonzero[0] if nonzero else params.cost_models[0]
    user_w = []
    for i, m in enumerate(params.cost_models):
        w = _scale_factor(m, base)
        if w is None:
            raise NonProportionalCosts(
                f"cost model of user {i} ({m.to_dict()}) is not a multiple of {base.to_dict()}"
            )
        user_w.append(w)
    user_w = np.asarray(user_w)
    q = np.asarray(params.request_probs)
    masks = np.arange(2**N)
    bits = (masks[:, None] >> np.arange(N)) & 1
    weights = bits @ user_w
    probs = np.prod(np.where(bits == 1, q, 1.0 - q), axis=1)
    order = np.lexsort((masks, weights))
    return RequestClasses(
        weights=weights[order],
        probs=probs[order],
        base=base,
        p=params.p,
        masks=tuple(int(x) for x in masks[order]),
    )


def _is_trivial(classes: RequestClasses, C_f: float):
    """theta and thresholds when no fixed-point search is needed, else None."""
    M = classes.n_active
    p_active = float(classes.probs[classes.n_zero:].sum())
    if M == 0 or p_active <= 0.0 or classes.base.is_zero():
        return 0.0, (NEVER,) * M
    if C_f == 0.0:
        return 0.0, (1,) * M
    return None


def f_of_theta(params: SystemParams, theta: float) -> FTheta:
    """One backward sweep: f(theta), the thresholds and g(tau) at this theta."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    return _sweep(theta, homogeneous_classes(params), params.C_f)


def _fixed_point(classes, C_f, theta0, eps, alpha0, max_damped=500, max_bisect=200):
    trace = FixedPointTrace(alpha=alpha0)

    def evaluate(theta):
        res = _sweep(theta, classes, C_f)
        trace.steps.append((theta, res.f_value))
        trace.thresholds.append(res.thresholds)
        return res

    lo = min(eps * 1e-3, C_f * 1e-9)
    hi = C_f
    r_lo = _sweep(lo, classes, C_f).f_value - lo
    r_hi = _sweep(hi, classes, C_f).f_value - hi
    if r_hi >= 0.0 and r_lo > 0.0:
        if r_hi == 0.0:
            return hi, evaluate(hi), trace
        raise NoBracket(
            "residual f(theta) - theta is positive on the whole bracket",
            {"lo": lo, "hi": hi, "r_lo": r_lo, "r_hi": r_hi},
        )
    if r_lo <= 0.0:
        raise NoBracket(
            "residual f(theta) - theta is nonpositive on the whole bracket",
            {"lo": lo, "hi": hi, "r_lo": r_lo, "r_hi": r_hi},
        )

    alpha = alpha0
    theta = min(max(theta0, lo), hi)
    signs = []
    res = evaluate(theta)
    for _ in range(max_damped):
        r = res.f_value - theta
        if r > 0:
            lo = max(lo, theta)
        elif r < 0:
            hi = min(hi, theta)
        else:
            trace.converged = True
            trace.alpha = alpha
            return theta, res, trace
        signs.append(r > 0)
        if len(signs) >= 3 and signs[-1] != signs[-2] and signs[-2] != signs[-3]:
            alpha *= 0.5
            signs.clear()
        step = alpha * r
        nxt = theta + step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - theta) <= eps:
            theta = nxt
            res = evaluate(theta)
            trace.converged = True
            break
        theta = nxt
        res = evaluate(theta)
    trace.alpha = alpha

    # bisection fallback, also used to polish a damped stop with a large residual
    for _ in range(max_bisect):
        r = res.f_value - theta
        if r > 0:
            lo = max(lo, theta)
        elif r < 0:
            hi = min(hi, theta)
        if abs(r) <= eps or hi - lo <= eps * 1e-3:
            trace.converged = True
            break
        theta = 0.5 * (lo + hi)
        res = evaluate(theta)
        trace.bisection_steps += 1
    return theta, res, trace


def solve_homogeneous(
    params: SystemParams,
    theta0: float | None = None,
    eps: float = 1e-6,
    alpha0: float = 0.1,
    max_damped: int = 500,
):
    """Optimal threshold policy for identical users.

    Returns ``(ThresholdPolicy, FixedPointTrace)``.
    """
    if not 0 < alpha0 < 1:
        raise ValueError("alpha0 must lie in (0, 1)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    classes = homogeneous_classes(params)
    trivial = _is_trivial(classes, params.C_f)
    if trivial is not None:
        theta, thr = trivial
        return ThresholdPolicy(theta, thr, {}, 0), FixedPointTrace(alpha=alpha0, converged=True)
    if theta0 is None:
        theta0 = 0.5 * params.C_f
    if theta0 <= 0:
        raise ValueError("theta0 must be positive")
    theta, res, trace = _fixed_point(classes, params.C_f, theta0, eps, alpha0, max_damped)
    policy = ThresholdPolicy(theta, res.thresholds, res.g_table, len(trace.steps))
    return policy, trace


def solve_heterogeneous(
    params: SystemParams,
    theta0: float | None = None,
    eps: float = 1e-6,
    alpha0: float = 0.1,
    max_damped: int = 500,
) -> ThresholdPolicy:
    """Optimal policy over ranked request configurations (N <= 12).

    Requires every user's cost model to be a nonnegative multiple of one base
    model so the ranking of configurations does not depend on ``tau``.
    """
    classes = configuration_classes(params)
    trivial = _is_trivial(classes, params.C_f)
    if trivial is not None:
        theta, thr = trivial
        iterations = 0
        g_table = {}
    else:
        if theta0 is None:
            theta0 = 0.5 * params.C_f
        theta, res, trace = _fixed_point(classes, params.C_f, theta0, eps, alpha0, max_damped)
        thr = res.thresholds
        g_table = res.g_table
        iterations = len(trace.steps)
    z = classes.n_zero
    config_thr = {mask: NEVER for mask in classes.masks[:z]}
    for r, mask in enumerate(classes.masks[z:]):
        config_thr[mask] = thr[r]
    return ThresholdPolicy(
        theta,
        tuple(thr),
        g_table,
        iterations,
        config_thresholds=config_thr,
        rank_masks=classes.masks[z:],
    )


def f_curve(params: SystemParams, thetas) -> np.ndarray:
    """f(theta) on a grid of theta values."""
    classes = homogeneous_classes(params)
    return np.array([_sweep(float(t), classes, params.C_f).f_value for t in thetas])
