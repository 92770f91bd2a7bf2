"""Whittle-index fetching policy built from per-user renewal-reward solutions.

Charging a single user a price ``lam`` per fetch, the best policy fetches on a
request once ``tau`` reaches ``f(lam)``, the minimiser of the cycle ratio

    (q * sum_{x=1}^{tau-1} Cbar(x) + lam) / (tau + (1 - q) / q).

The index ``g(tau)`` is the smallest price at which waiting beyond ``tau`` is
optimal.  The combined policy fetches when at least one user requests and the
requesters' indices sum to more than ``C_f``; this form does not depend on
how ``C_f`` is split among users.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost_model import AgeCostModel, SystemParams
from .errors import CapExceeded
from .threshold_solver import NEVER

SCAN_CAP = 10**6
RISES_TO_STOP = 3
DEFAULT_INDEX_TOL = 1e-8


@dataclass(frozen=True)
class SingleUserProblem:
    q: float
    cost_model: AgeCostModel
    p: float
    _cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError("single-user problem needs 0 < q <= 1")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("update probability must lie in (0, 1]")

    def cycle_terms(self, K: int):
        """(age cost per cycle, expected cycle length) for thresholds 1..K."""
        A = self._cache.get("A")
        if A is None or len(A) < K:
            K = max(K, 2 * len(A) if A is not None else 64)
            cbar = self.cost_model.expected(self.p, np.arange(1, K))
            A = self.q * np.concatenate(([0.0], np.cumsum(cbar)))
            self._cache["A"] = A
            self._cache["L"] = np.arange(1, K + 1) + (1.0 - self.q) / self.q
        return self._cache["A"][:K], self._cache["L"][:K]

    def ratio(self, price: float, K: int) -> np.ndarray:
        A, L = self.cycle_terms(K)
        return (A + price) / L


def renewal_threshold(sup: SingleUserProblem, price: float) -> int:
    """Cycle-ratio minimiser, scanning tau upward until 3 strict rises in a row."""
    if price <= 0:
        raise ValueError("price must be positive; nonpositive prices mean always fetch")
    if sup.cost_model.is_zero():
        raise CapExceeded("zero age cost: waiting is always cheaper")
    K = 64
    while True:
        R = sup.ratio(price, K)
        rises = R[1:] > R[:-1]
        run = rises[:-2] & rises[1:-1] & rises[2:]
        hits = np.flatnonzero(run)
        if hits.size:
            stop = int(hits[0]) + RISES_TO_STOP + 1  # number of scanned tau values
            return int(np.argmin(R[:stop])) + 1
        if K >= SCAN_CAP:
            raise CapExceeded(f"renewal scan exceeded {SCAN_CAP} steps at price {price}")
        K = min(2 * K, SCAN_CAP)


def _waits_beyond(sup, price, tau) -> bool:
    try:
        return renewal_threshold(sup, price) > tau
    except CapExceeded:
        return True


def index_g(sup: SingleUserProblem, tau: int, tol: float = DEFAULT_INDEX_TOL, lo: float = 0.0) -> float:
    """Smallest price making the single user wait beyond ``tau`` (to within ``tol``).

    ``lo`` may be any price known to satisfy ``f(lo) <= tau``; it only speeds up
    the search.  The returned value ``x`` always satisfies ``f(x) > tau``.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    hi = max(tol, 2.0 * lo)
    while not _waits_beyond(sup, hi, tau):
        lo = hi
        hi *= 2.0
    if lo == 0.0 and hi == tol:
        return tol
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break  # tol finer than float spacing at this magnitude
        if _waits_beyond(sup, mid, tau):
            hi = mid
        else:
            lo = mid
    return hi


def _problem_key(q, model, p):
    return (q, model, p)


class WhittleIndexTable:
    """Per-user index functions g_i(tau), tabulated for tau = 1..cap and grown on demand.

    Users with identical (q, cost model) share one table.  Extension mutates
    shared state; build the table fully before handing it to concurrent readers.
    """

    def __init__(self, params: SystemParams, tau_cap: int | None = None, tol: float = DEFAULT_INDEX_TOL):
        self.params = params
        self.tol = tol
        self._problems = {}
        self._user_key = []
        for q, model in zip(params.request_probs, params.cost_models):
            key = _problem_key(q, model, params.p)
            self._user_key.append(key)
            if key not in self._problems:
                self._problems[key] = None if q == 0 or model.is_zero() else SingleUserProblem(q, model, params.p)
        self._tables = {key: np.zeros(0) for key in self._problems}
        for key, sup in self._problems.items():
            if tau_cap is not None:
                cap = tau_cap
            elif sup is None or params.C_f <= 0:
                cap = 16
            else:
                try:
                    cap = max(16, 4 * renewal_threshold(sup, params.C_f))
                except CapExceeded:
                    cap = 16
            self._extend(key, cap)

    @property
    def num_users(self) -> int:
        return len(self._user_key)

    def tau_cap(self, user: int) -> int:
        return len(self._tables[self._user_key[user]])

    def _extend(self, key, cap):
        old = self._tables[key]
        if len(old) >= cap:
            return
        sup = self._problems[key]
        if sup is None:
            # users who never request, or whose age costs nothing, never earn a fetch
            self._tables[key] = np.zeros(cap)
            return
        new = np.empty(cap)
        new[: len(old)] = old
        lo = float(old[-1]) - self.tol if len(old) else 0.0
        for t in range(len(old) + 1, cap + 1):
            new[t - 1] = index_g(sup, t, self.tol, lo=max(lo, 0.0))
            lo = new[t - 1] - self.tol
        self._tables[key] = new

    def g(self, user: int, tau: int) -> float:
        key = self._user_key[user]
        table = self._tables[key]
        if tau > len(table):
            self._extend(key, max(tau, 2 * len(table)))
            table = self._tables[key]
        return float(table[tau - 1])

    def column(self, user: int, upto: int) -> np.ndarray:
        """g_i(1..upto) as an array."""
        key = self._user_key[user]
        self._extend(key, upto)
        return self._tables[key][:upto]

    def index_sum(self, tau: int, s) -> float:
        return sum(self.g(i, tau) for i, b in enumerate(s) if b)


def build_table(params: SystemParams, tau_cap: int | None = None, tol: float = DEFAULT_INDEX_TOL) -> WhittleIndexTable:
    return WhittleIndexTable(params, tau_cap, tol)


def whittle_index(table: WhittleIndexTable, user: int, tau: int, s: int, alpha_cf: float) -> float:
    """Index of one user's state when it is charged ``alpha_cf`` of the fetch cost."""
    if s:
        return table.g(user, tau) - alpha_cf
    return -alpha_cf


def wi_decide(table: WhittleIndexTable, C_f: float, tau: int, s) -> bool:
    """Fetch iff someone requests and the requesters' indices sum to more than C_f."""
    if not any(s):
        return False
    return table.index_sum(tau, s) - C_f > 0


def wi_threshold(table: WhittleIndexTable, C_f: float, users, tau_limit: int = 1 << 20) -> float:
    """Smallest tau at which the requesting set ``users`` triggers a fetch."""
    users = list(users)
    if not users:
        return NEVER
    # start from the shortest table: growing past every cap compounds quickly
    upto = min(table.tau_cap(i) for i in users)
    while True:
        total = sum(table.column(i, upto) for i in users)
        hits = np.flatnonzero(total - C_f > 0)
        if hits.size:
            return int(hits[0]) + 1
        if upto >= tau_limit or all(table._problems[table._user_key[i]] is None for i in users):
            return NEVER
        upto *= 2


def wi_thresholds_homogeneous(table: WhittleIndexTable, C_f: float, N: int) -> list:
    """Whittle thresholds for m = 1..N identical requesters."""
    if N > table.num_users:
        raise ValueError("table has fewer users than N")
    col_len = table.tau_cap(0)
    out = []
    for m in range(1, N + 1):
        while True:
            g = table.column(0, col_len)
            hits = np.flatnonzero(m * g - C_f > 0)
            if hits.size:
                out.append(int(hits[0]) + 1)
                break
            if col_len >= 1 << 20 or table._problems[table._user_key[0]] is None:
                out.append(NEVER)
                break
            col_len *= 2
    return out


def index_exact(sup: SingleUserProblem, tau: int, K: int | None = None) -> float:
    """Exact breakpoint of f at ``tau`` by piecewise-linear root finding.

    Independent of the scan-and-bisect route; used as a cross-check.  Each
    cycle ratio ``R_t(lam) = (A_t + lam) / L_t`` is a line in ``lam``.  The gap
    ``D(lam) = min_{t <= tau} R_t - min_{u > tau} R_u`` has slope
    ``1/L_t - 1/L_u > 0``, so it is strictly increasing, and between two
    consecutive pairwise crossings both minima are single lines.  The index is
    the root of ``D``.  ``K`` must exceed every minimiser near that root.
    """
    if K is None:
        K = max(8 * tau, 256)
    A, L = sup.cycle_terms(K)
    A, L = A[:K], L[:K]
    # all pairwise crossings of the lines
    dA = A[None, :] * L[:, None] - A[:, None] * L[None, :]
    dL = L[None, :] - L[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = dA / dL
    cand = np.unique(cross[np.isfinite(cross) & (cross > 0)])

    def gap(lam):
        R = (A + lam) / L
        return R[:tau].min() - R[tau:].min()

    # smallest breakpoint at which the right family already wins or ties
    lo, hi = 0, len(cand) - 1
    if gap(cand[hi]) < 0:
        raise ValueError("K too small: the root lies beyond every crossing")
    while lo < hi:
        mid = (lo + hi) // 2
        if gap(cand[mid]) >= 0:
            hi = mid
        else:
            lo = mid + 1
    right = cand[lo]
    left = cand[lo - 1] if lo > 0 else 0.0
    lam = 0.5 * (left + right)
    R = (A + lam) / L
    t = int(np.argmin(R[:tau]))
    u = tau + int(np.argmin(R[tau:]))
    # (A_t + lam) / L_t = (A_u + lam) / L_u
    return float((A[u] * L[t] - A[t] * L[u]) / (L[u] - L[t]))
