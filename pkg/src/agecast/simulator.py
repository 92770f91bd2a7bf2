"""Slotted simulation of the fetch/broadcast system under a given policy.

Each slot: one Bernoulli(p) content update is drawn and added to the version
age ``V``; requests are drawn; the policy sees ``(tau, s)``.  A fetch costs
``C_f`` and serves everyone the fresh version (``V`` and ``tau`` restart); an
idle slot costs each requester ``C_a(V)`` (realized mode) or ``E[C_a(V)]`` at
the current ``tau`` (expected mode).  With this ordering ``V`` is
Binomial(tau, p) at every slot.

Random streams are counter-based Philox generators keyed by
``SeedSequence(seed, spawn_key=(purpose, user))`` with purpose 0 for content
updates, 1 for per-user request bits and 2 for per-slot request counts of
identical users.  Request and update draws do not depend on the policy, so
runs sharing a seed use common random numbers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from numba import njit
from scipy import stats

from .cost_model import SystemParams
from .threshold_solver import NEVER, ThresholdPolicy
from .whittle import WhittleIndexTable, wi_decide, wi_threshold, wi_thresholds_homogeneous

REALIZED = "realized"
EXPECTED = "expected"
N_BATCHES = 30

STREAM_UPDATES = 0
STREAM_REQUEST_BITS = 1
STREAM_REQUEST_COUNTS = 2

# per-user request bits are packed into an int64 mask
MAX_MASK_USERS = 20


@dataclass(frozen=True)
class SimConfig:
    params: SystemParams
    horizon: int = 10**6
    seed: int = 0
    warmup: int | None = None
    cost_mode: str = EXPECTED

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.cost_mode not in (REALIZED, EXPECTED):
            raise ValueError(f"cost_mode must be {REALIZED!r} or {EXPECTED!r}")
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.horizon // 100)
        if not 0 <= self.warmup < self.horizon:
            raise ValueError("warmup must lie in [0, horizon)")


@dataclass(frozen=True)
class SimulationReport:
    avg_cost: float
    fetch_cost_share: float
    age_cost_share: float
    fetch_rate: float
    fetch_interval_mean: float
    fetch_interval_variance: float
    ci95_halfwidth: float
    slots: int
    policy: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


# -- policies -------------------------------------------------------------
#
# ``decide(tau, s)`` is the reference behaviour.  ``compile(params, kind)``
# optionally returns thresholds indexed by the request key (count or mask) so
# the simulator can run without calling back into Python every slot.

class Policy:
    name = "policy"
    key_kind = "any"  # "any" ignores requests, "count" uses m, "mask" uses s

    def decide(self, tau: int, s) -> bool:
        raise NotImplementedError

    def compile(self, params: SystemParams, kind: str):
        return None


class AlwaysFetch(Policy):
    name = "always"

    def decide(self, tau, s):
        return True

    def compile(self, params, kind):
        return np.ones(_n_keys(params, kind))


class NeverFetch(Policy):
    name = "never"

    def decide(self, tau, s):
        return False

    def compile(self, params, kind):
        return np.full(_n_keys(params, kind), NEVER)


class PeriodicFetch(Policy):
    """Fetch every ``period`` slots whatever the requests."""

    def __init__(self, period: int):
        if period < 1:
            raise ValueError("period must be >= 1")
        self.period = int(period)
        self.name = f"periodic({self.period})"

    def decide(self, tau, s):
        return tau >= self.period

    def compile(self, params, kind):
        return np.full(_n_keys(params, kind), float(self.period))


class ThresholdPolicyAdapter(Policy):
    """Optimal threshold policy: request count for identical users, config rank otherwise."""

    name = "optimal"

    def __init__(self, policy: ThresholdPolicy):
        self.policy = policy
        self.key_kind = "mask" if policy.heterogeneous else "count"

    def decide(self, tau, s):
        return self.policy.decide(tau, s)

    def compile(self, params, kind):
        if kind == "count" and not self.policy.heterogeneous:
            return np.array((NEVER,) + tuple(self.policy.thresholds), dtype=float)
        if kind == "mask" and self.policy.heterogeneous:
            thr = np.empty(2**params.N)
            for mask, t in self.policy.config_thresholds.items():
                thr[mask] = t
            return thr
        if kind == "mask":
            masks = np.arange(2**params.N)
            counts = np.array([bin(int(x)).count("1") for x in masks])
            base = np.array((NEVER,) + tuple(self.policy.thresholds), dtype=float)
            return base[counts]
        return None


class WhittlePolicyAdapter(Policy):
    name = "whittle"

    def __init__(self, table: WhittleIndexTable, C_f: float):
        self.table = table
        self.C_f = C_f
        self.key_kind = "count" if table.params.homogeneous() else "mask"

    def decide(self, tau, s):
        return wi_decide(self.table, self.C_f, tau, s)

    def compile(self, params, kind):
        if kind == "count" and params.homogeneous():
            thr = wi_thresholds_homogeneous(self.table, self.C_f, params.N)
            return np.array([NEVER] + thr, dtype=float)
        if kind == "mask" and params.N <= MAX_MASK_USERS:
            thr = np.empty(2**params.N)
            for mask in range(2**params.N):
                users = [i for i in range(params.N) if mask >> i & 1]
                thr[mask] = wi_threshold(self.table, self.C_f, users)
            return thr
        return None


def _n_keys(params, kind):
    return params.N + 1 if kind == "count" else 2**params.N


# -- core -------------------------------------------------------------------

@njit(cache=True)
def _run_core(keys, thr, updates, counts, cbar, cval, C_f, realized, warmup, n_batches, path_tau, path_v):
    H = keys.shape[0]
    record = path_tau.shape[0] > 0
    G = counts.shape[0]
    n_eff = H - warmup
    batch = np.zeros(n_batches)
    fetch_total = 0.0
    age_total = 0.0
    n_fetch = 0
    n_int = 0
    int_sum = 0.0
    int_sumsq = 0.0
    last_fetch = -1
    tau = 1
    V = 0
    for t in range(H):
        V += updates[t]
        if record:
            path_tau[t] = tau
            path_v[t] = V
        if tau >= thr[keys[t]]:
            cost = C_f
            fetched = True
        else:
            cost = 0.0
            for g in range(G):
                c = counts[g, t]
                if c > 0:
                    if realized:
                        cost += c * cval[g, V]
                    else:
                        cost += c * cbar[g, tau - 1]
            fetched = False
        if t >= warmup:
            b = (t - warmup) * n_batches // n_eff
            batch[b] += cost
            if fetched:
                fetch_total += cost
                n_fetch += 1
                if last_fetch >= warmup:
                    gap = t - last_fetch
                    n_int += 1
                    int_sum += gap
                    int_sumsq += gap * gap
            else:
                age_total += cost
        if fetched:
            last_fetch = t
            tau = 1
            V = 0
        else:
            tau += 1
    return fetch_total, age_total, n_fetch, n_int, int_sum, int_sumsq, batch


def _stream(seed, purpose, user=0):
    ss = np.random.SeedSequence(seed, spawn_key=(purpose, user))
    return np.random.Generator(np.random.Philox(ss))


def _cost_groups(params):
    models = []
    group_of = []
    for m in params.cost_models:
        if m not in models:
            models.append(m)
        group_of.append(models.index(m))
    return models, np.asarray(group_of)


def draw_slots(config: SimConfig, kind: str):
    """Per-slot update draws, request keys and per-cost-group request counts."""
    params = config.params
    H = config.horizon
    updates = (_stream(config.seed, STREAM_UPDATES).random(H) < params.p).astype(np.int64)
    models, group_of = _cost_groups(params)
    if kind != "mask" and params.homogeneous():
        m = _stream(config.seed, STREAM_REQUEST_COUNTS).binomial(params.N, params.q, size=H)
        keys = m.astype(np.int64)
        counts = keys[None, :].copy()
        return updates, keys, counts, models
    masks = np.zeros(H, dtype=np.int64)
    counts = np.zeros((len(models), H), dtype=np.int64)
    for i, q in enumerate(params.request_probs):
        bit = (_stream(config.seed, STREAM_REQUEST_BITS, i).random(H) < q).astype(np.int64)
        if kind == "mask":
            masks |= bit << i
        counts[group_of[i]] += bit
    keys = masks if kind == "mask" else counts.sum(axis=0)
    return updates, keys, counts, models


def _tau_needed(thr, keys, counts, horizon):
    finite = thr[np.isfinite(thr)]
    # age cost is only charged while idling with requests; beyond every finite
    # threshold that can only happen for keys whose threshold is infinite
    present = np.zeros(len(thr), dtype=bool)
    active = counts.sum(axis=0) > 0
    present[np.unique(keys[active])] = True
    if np.any(present & ~np.isfinite(thr)):
        return horizon + 1
    return int(finite.max()) + 1 if finite.size else 1


def simulate(config: SimConfig, policy: Policy) -> SimulationReport:
    return _simulate(config, policy, record=False)[0]


def sample_path(config: SimConfig, policy: Policy):
    """Run a compiled policy and also return the per-slot ``tau`` and ``V`` seen by the policy."""
    rep, tau, V = _simulate(config, policy, record=True)
    if tau is None:
        raise ValueError("sample paths need a policy that compiles to thresholds")
    return rep, tau, V


def _simulate(config, policy, record):
    params = config.params
    # request-blind policies run on counts, which is cheapest to draw
    kind = "mask" if policy.key_kind == "mask" else "count"
    thr = None
    if not (kind == "mask" and params.N > MAX_MASK_USERS):
        thr = policy.compile(params, kind)
    if thr is None:
        return _simulate_generic(config, policy), None, None
    updates, keys, counts, models = draw_slots(config, kind)
    T = _tau_needed(thr, keys, counts, config.horizon)
    taus = np.arange(1, T + 1)
    cbar = np.vstack([np.asarray(m.expected(params.p, taus), dtype=float) for m in models])
    if config.cost_mode == REALIZED:
        cval = np.vstack([np.asarray(m.cost(np.arange(T + 1)), dtype=float) for m in models])
    else:
        cval = np.zeros((len(models), 1))
    size = config.horizon if record else 0
    path_tau = np.zeros(size, dtype=np.int64)
    path_v = np.zeros(size, dtype=np.int64)
    out = _run_core(
        keys,
        np.asarray(thr, dtype=float),
        updates,
        counts,
        cbar,
        cval,
        float(params.C_f),
        config.cost_mode == REALIZED,
        int(config.warmup),
        N_BATCHES,
        path_tau,
        path_v,
    )
    rep = _report(config, policy, *out)
    return (rep, path_tau, path_v) if record else (rep, None, None)


def _simulate_generic(config: SimConfig, policy: Policy) -> SimulationReport:
    """Per-slot Python loop calling ``policy.decide``; for policies that cannot compile."""
    params = config.params
    H = config.horizon
    updates = _stream(config.seed, STREAM_UPDATES).random(H) < params.p
    bits = np.column_stack([
        _stream(config.seed, STREAM_REQUEST_BITS, i).random(H) < q
        for i, q in enumerate(params.request_probs)
    ])
    warmup = config.warmup
    n_eff = H - warmup
    batch = np.zeros(N_BATCHES)
    fetch_total = age_total = 0.0
    n_fetch = n_int = 0
    int_sum = int_sumsq = 0.0
    last_fetch = -1
    tau, V = 1, 0
    realized = config.cost_mode == REALIZED
    for t in range(H):
        V += int(updates[t])
        s = bits[t]
        if policy.decide(tau, s):
            cost, fetched = params.C_f, True
        else:
            fetched = False
            cost = 0.0
            for i in np.flatnonzero(s):
                m = params.cost_models[i]
                cost += m.cost(V) if realized else m.expected(params.p, tau)
        if t >= warmup:
            batch[(t - warmup) * N_BATCHES // n_eff] += cost
            if fetched:
                fetch_total += cost
                n_fetch += 1
                if last_fetch >= warmup:
                    gap = t - last_fetch
                    n_int += 1
                    int_sum += gap
                    int_sumsq += gap * gap
            else:
                age_total += cost
        if fetched:
            last_fetch, tau, V = t, 1, 0
        else:
            tau += 1
    return _report(config, policy, fetch_total, age_total, n_fetch, n_int, int_sum, int_sumsq, batch)


def _report(config, policy, fetch_total, age_total, n_fetch, n_int, int_sum, int_sumsq, batch):
    n_eff = config.horizon - config.warmup
    # batches differ in length by at most one slot
    edges = (np.arange(N_BATCHES + 1) * n_eff + N_BATCHES - 1) // N_BATCHES
    lengths = np.diff(edges)
    if np.any(lengths == 0):
        ci = math.nan
    else:
        means = batch / lengths
        ci = float(stats.t.ppf(0.975, N_BATCHES - 1) * means.std(ddof=1) / math.sqrt(N_BATCHES))
    if n_int:
        mean = int_sum / n_int
        var = max(int_sumsq / n_int - mean * mean, 0.0)
    else:
        mean = var = math.nan
    fetch_share = fetch_total / n_eff
    age_share = age_total / n_eff
    return SimulationReport(
        avg_cost=fetch_share + age_share,
        fetch_cost_share=fetch_share,
        age_cost_share=age_share,
        fetch_rate=n_fetch / n_eff,
        fetch_interval_mean=mean,
        fetch_interval_variance=var,
        ci95_halfwidth=ci,
        slots=n_eff,
        policy=policy.name,
    )


def compare_policies(config: SimConfig, policies, common_random_numbers: bool = True) -> list:
    """Simulate each policy; with common random numbers every policy sees the same draws."""
    reports = []
    for j, pol in enumerate(policies):
        cfg = config
        if not common_random_numbers:
            seed = int(np.random.SeedSequence(config.seed, spawn_key=(99, j)).generate_state(1)[0])
            cfg = replace(config, seed=seed)
        reports.append(simulate(cfg, pol))
    return reports


def fetch_interval_variance_sweep(base: SimConfig, N_values, C_1: float = 1.0, policy_factory=None) -> list:
    """Fetch-interval variance of the optimal policy with C_f = N * C_1; rows (N, variance)."""
    from .threshold_solver import solve_homogeneous

    if not base.params.homogeneous():
        raise ValueError("variance sweep needs a homogeneous base instance")
    rows = []
    for N in N_values:
        params = base.params.replace(num_users=int(N), fetch_cost=N * C_1)
        if policy_factory is None:
            pol = ThresholdPolicyAdapter(solve_homogeneous(params)[0])
        else:
            pol = policy_factory(params)
        rep = simulate(replace(base, params=params), pol)
        rows.append((int(N), rep.fetch_interval_variance))
    return rows
