"""Age-cost functions, their expectations over the version age, and system parameters.

The version age ``V`` seen by a requester ``tau`` slots after the last fetch is
Binomial(tau, p).  Everything downstream works with the expected cost
``E[C_a(V)]`` as a function of ``tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import binom

from .errors import DegenerateCost

LINEAR = "linear"
QUADRATIC = "quadratic"
CUSTOM = "custom"
_KINDS = (LINEAR, QUADRATIC, CUSTOM)

# below this size the pmf is evaluated with exact integer binomials; above it
# scipy's saddle-point form, which avoids the cancellation of a plain lgamma sum
_LOG_SPACE_MIN_N = 50


def binom_pmf(n: int, q: float, k: int) -> float:
    """Binomial(n, q) probability mass at k."""
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    if q <= 0.0:
        return 1.0 if k == 0 else 0.0
    if q >= 1.0:
        return 1.0 if k == n else 0.0
    if n <= _LOG_SPACE_MIN_N:
        return math.comb(n, k) * q**k * (1.0 - q) ** (n - k)
    return float(binom.pmf(k, n, q))


def binom_pmf_vector(n: int, q: float) -> np.ndarray:
    """All n+1 Binomial(n, q) masses as an array indexed by k."""
    k = np.arange(n + 1)
    if q <= 0.0:
        return (k == 0).astype(float)
    if q >= 1.0:
        return (k == n).astype(float)
    if n <= _LOG_SPACE_MIN_N:
        return np.array([binom_pmf(n, q, int(i)) for i in k])
    return binom.pmf(k, n, q)


@dataclass(frozen=True)
class AgeCostModel:
    """Convex nondecreasing cost of serving content that is ``v`` versions stale.

    ``linear`` is ``c_a * v``, ``quadratic`` is ``c_a * v**2`` and ``custom``
    looks ``v`` up in ``table``, continuing affinely with the last slope past
    the end of the table.
    """

    kind: str
    c_a: float = 0.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == CUSTOM:
            t = tuple(float(x) for x in self.table)
            object.__setattr__(self, "table", t)
            if not t:
                raise ValueError("custom cost table is empty")
            arr = np.asarray(t)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("custom cost table must be finite and nonnegative")
            d = np.diff(arr)
            if np.any(d < 0):
                raise ValueError("custom cost table must be nondecreasing")
            if np.any(np.diff(d) < -1e-12 * max(1.0, float(arr.max()))):
                raise ValueError("custom cost table must be discretely convex")
        else:
            c = float(self.c_a)
            if not math.isfinite(c) or c < 0:
                raise ValueError("c_a must be finite and nonnegative")
            object.__setattr__(self, "c_a", c)
            object.__setattr__(self, "table", ())

    @classmethod
    def linear(cls, c_a: float) -> "AgeCostModel":
        return cls(LINEAR, c_a=c_a)

    @classmethod
    def quadratic(cls, c_a: float) -> "AgeCostModel":
        return cls(QUADRATIC, c_a=c_a)

    @classmethod
    def custom(cls, table: Sequence[float]) -> "AgeCostModel":
        return cls(CUSTOM, table=tuple(table))

    @property
    def _tail(self):
        # (value at last table index, final slope)
        t = self.table
        slope = t[-1] - t[-2] if len(t) > 1 else 0.0
        return t[-1], slope

    def is_zero(self) -> bool:
        if self.kind == CUSTOM:
            return not any(self.table)
        return self.c_a == 0.0

    def scaled(self, w: float) -> "AgeCostModel":
        if self.kind == CUSTOM:
            return AgeCostModel.custom([w * x for x in self.table])
        return AgeCostModel(self.kind, c_a=w * self.c_a)

    def cost(self, v):
        """C_a(v); accepts scalars or integer arrays."""
        v_arr = np.asarray(v)
        if np.any(v_arr < 0):
            raise ValueError("version age must be nonnegative")
        if self.kind == LINEAR:
            out = self.c_a * v_arr
        elif self.kind == QUADRATIC:
            out = self.c_a * v_arr.astype(float) ** 2
        else:
            t = np.asarray(self.table)
            last, slope = self._tail
            n = len(t)
            inside = np.minimum(v_arr, n - 1)
            out = np.where(v_arr < n, t[inside], last + slope * (v_arr - (n - 1)))
        return float(out) if np.ndim(out) == 0 else out.astype(float)

    def expected(self, p: float, tau):
        """E[C_a(V)] with V ~ Binomial(tau, p); vectorised over tau."""
        tau_arr = np.asarray(tau)
        if np.any(tau_arr < 1):
            raise ValueError("tau must be >= 1")
        tf = tau_arr.astype(float)
        if self.kind == LINEAR:
            out = self.c_a * p * tf
        elif self.kind == QUADRATIC:
            out = self.c_a * (tf * p * (1.0 - p) + (tf * p) ** 2)
        else:
            out = self._custom_expected(p, tau_arr)
        return float(out) if np.ndim(out) == 0 else np.asarray(out, dtype=float)

    def _custom_expected(self, p, tau_arr):
        # write C(v) = a + b v + r(v) where r vanishes beyond the table, so
        # E[C(V)] = a + b tau p + sum_{v < L} pmf(v) r(v)
        t = np.asarray(self.table)
        n = len(t)
        last, slope = self._tail
        a = last - slope * (n - 1)
        resid = t - (a + slope * np.arange(n))
        tau = np.atleast_1d(tau_arr).astype(np.int64)
        out = a + slope * p * tau.astype(float)
        for k in range(n):
            if resid[k] != 0.0:
                out = out + resid[k] * binom.pmf(k, tau, p)
        return out.reshape(np.shape(tau_arr)) if np.ndim(tau_arr) else float(out[0])

    def expected_limit(self, p: float) -> float:
        """sup over tau of E[C_a(V)] (inf when the cost grows without bound)."""
        if self.is_zero():
            return 0.0
        if self.kind == CUSTOM and self._tail[1] == 0.0:
            return self._tail[0] if p > 0 else self.table[0]
        if p == 0.0:
            return 0.0 if self.kind != CUSTOM else self.table[0]
        return math.inf

    def to_dict(self) -> dict:
        if self.kind == CUSTOM:
            return {"kind": CUSTOM, "table": list(self.table)}
        return {"kind": self.kind, "c_a": self.c_a}


def age_cost(model: AgeCostModel, v: int) -> float:
    return model.cost(v)


def avg_age_cost(model: AgeCostModel, p: float, tau: int) -> float:
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return model.expected(p, tau)


def inverse_avg_age_cost(model: AgeCostModel, p: float, y: float) -> int:
    """Smallest integer tau >= 1 with E[C_a(V_tau)] >= y."""
    if y <= 0:
        return 1
    if y > model.expected_limit(p):
        raise DegenerateCost(
            f"expected age cost never reaches {y} (model {model.to_dict()}, p={p})"
        )

    def reaches(t):
        return model.expected(p, t) >= y

    if model.kind == LINEAR:
        guess = math.ceil(y / (model.c_a * p))
    elif model.kind == QUADRATIC:
        a = p * p
        b = p * (1.0 - p)
        guess = math.ceil((-b + math.sqrt(b * b + 4.0 * a * y / model.c_a)) / (2.0 * a))
    else:
        hi = 1
        while not reaches(hi):
            hi *= 2
            if hi > 2**40:
                raise DegenerateCost(f"expected age cost never reaches {y}")
        lo = hi // 2  # reaches(lo) is false unless lo == 0
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if reaches(mid):
                hi = mid
            else:
                lo = mid
        return max(hi, 1)
    # the closed forms can be off by one in floating point
    tau = max(guess, 1)
    while tau > 1 and reaches(tau - 1):
        tau -= 1
    while not reaches(tau):
        tau += 1
    return tau


def model_from_dict(d: dict) -> AgeCostModel:
    kind = d.get("kind")
    if kind == CUSTOM and "table" in d:
        return AgeCostModel.custom(d["table"])
    if kind in (LINEAR, QUADRATIC, CUSTOM):
        if "c_a" not in d:
            raise ValueError("cost model needs c_a")
        if kind == CUSTOM:
            # bare coefficient on a custom model means linear table continuation
            return AgeCostModel.custom([0.0, float(d["c_a"])])
        return AgeCostModel(kind, c_a=d["c_a"])
    raise ValueError(f"unknown cost kind {kind!r}")


@dataclass(frozen=True)
class SystemParams:
    """One sensor, N users, Bernoulli(p) content updates, Bernoulli(q_i) requests."""

    num_users: int
    update_prob: float
    request_probs: tuple
    fetch_cost: float
    cost_models: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "request_probs", tuple(float(q) for q in self.request_probs))
        object.__setattr__(self, "cost_models", tuple(self.cost_models))
        n = self.num_users
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise ValueError("num_users must be a positive integer")
        if not 0.0 < self.update_prob <= 1.0:
            raise ValueError("update_prob must lie in (0, 1]")
        if len(self.request_probs) != n:
            raise ValueError("request_probs must have num_users entries")
        if any(not 0.0 <= q <= 1.0 for q in self.request_probs):
            raise ValueError("request probabilities must lie in [0, 1]")
        if len(self.cost_models) != n:
            raise ValueError("cost_models must have num_users entries")
        if not math.isfinite(self.fetch_cost) or self.fetch_cost < 0:
            raise ValueError("fetch_cost must be finite and nonnegative")

    @classmethod
    def uniform(cls, num_users, update_prob, request_prob, fetch_cost, cost_model):
        return cls(
            num_users,
            update_prob,
            (request_prob,) * num_users,
            fetch_cost,
            (cost_model,) * num_users,
        )

    # short aliases used throughout the solvers
    @property
    def N(self) -> int:
        return self.num_users

    @property
    def p(self) -> float:
        return self.update_prob

    @property
    def C_f(self) -> float:
        return self.fetch_cost

    def homogeneous(self) -> bool:
        return len(set(self.request_probs)) == 1 and len(set(self.cost_models)) == 1

    @property
    def q(self) -> float:
        if len(set(self.request_probs)) != 1:
            raise ValueError("request probabilities differ across users")
        return self.request_probs[0]

    @property
    def cost_model(self) -> AgeCostModel:
        if len(set(self.cost_models)) != 1:
            raise ValueError("cost models differ across users")
        return self.cost_models[0]

    def replace(self, **changes) -> "SystemParams":
        """Copy with some fields changed; scalar q/cost are broadcast to all users."""
        d = dict(
            num_users=self.num_users,
            update_prob=self.update_prob,
            request_probs=self.request_probs,
            fetch_cost=self.fetch_cost,
            cost_models=self.cost_models,
        )
        d.update(changes)
        n = d["num_users"]
        if np.isscalar(d["request_probs"]):
            d["request_probs"] = (d["request_probs"],) * n
        elif len(d["request_probs"]) != n and len(set(d["request_probs"])) == 1:
            d["request_probs"] = (d["request_probs"][0],) * n
        if isinstance(d["cost_models"], AgeCostModel):
            d["cost_models"] = (d["cost_models"],) * n
        elif len(d["cost_models"]) != n and len(set(d["cost_models"])) == 1:
            d["cost_models"] = (d["cost_models"][0],) * n
        return SystemParams(**d)

    def to_dict(self) -> dict:
        return {
            "num_users": self.num_users,
            "update_prob": self.update_prob,
            "request_probs": list(self.request_probs),
            "fetch_cost": self.fetch_cost,
            "cost_models": [m.to_dict() for m in self.cost_models],
        }
