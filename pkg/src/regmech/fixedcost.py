"""Regulation with a privately known fixed cost and a known marginal cost.

The monopolist's total cost is theta + c q: the type theta is the fixed
cost and the marginal cost c is common knowledge. Incentives then bind on
the operation probability alone, the efficient quantity is the single
type-independent level where price meets marginal cost, and the
classification of mechanisms is complete: a mechanism is undominated
exactly when it operates the lowest type for sure, leaves no rent at the
top, produces efficiently whenever it operates, and its operation rule is
left continuous.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dominance import DominanceVerdict, Relation
from .errors import AssumptionError, ContractError, DomainError, InternalCheckError
from .market import TOL, Demand, TypeGrid


@dataclass(frozen=True)
class FixedCostEnv:
    """Fixed-cost screening environment: type bounds, marginal cost, demand, grid."""

    theta_low: float
    theta_high: float
    c: float
    demand: Demand
    grid: TypeGrid
    q_efficient: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.theta_low < self.theta_high):
            raise DomainError("need 0 < theta_low < theta_high")
        if self.c <= 0.0:
            raise DomainError("marginal cost must be positive")
        k = self.grid.knots
        if abs(k[0] - self.theta_low) > 1e-12 or abs(k[-1] - self.theta_high) > 1e-12:
            raise DomainError("grid endpoints must equal the type bounds")
        if self.c >= self.demand.price(0.0):
            raise DomainError("marginal cost at or above the choke price: no positive quantity")
        qe = self.demand.inverse(self.c)
        object.__setattr__(self, "q_efficient", float(qe))
        if self.demand.value(qe) - self.theta_high - self.c * qe <= 0.0:
            raise AssumptionError("highest fixed cost cannot operate at the efficient quantity")

    @classmethod
    def build(cls, demand: Demand, c: float, theta_low: float, theta_high: float,
              grid_n: int = 2001) -> "FixedCostEnv":
        return cls(theta_low, theta_high, c, demand,
                   TypeGrid.uniform(theta_low, theta_high, grid_n))


def fc_efficient_quantity(env: FixedCostEnv) -> float:
    """Type-independent efficient quantity: demand inverted at the marginal cost."""
    return env.q_efficient


@dataclass(frozen=True, eq=False)
class FixedCostMechanism:
    """Step mechanism for the fixed-cost model; rents integrate r alone."""

    env: FixedCostEnv
    q_vals: np.ndarray
    r_vals: np.ndarray
    overrides: tuple = ()
    u_bar: float = 0.0

    def __post_init__(self):
        q = np.ascontiguousarray(np.asarray(self.q_vals, dtype=float))
        r = np.ascontiguousarray(np.asarray(self.r_vals, dtype=float))
        n = self.env.grid.n
        if q.shape != (n,) or r.shape != (n,):
            raise ContractError(f"q and r must both have grid length {n}")
        qbar = self.env.demand.qbar
        if np.any(q < -TOL) or np.any(q > qbar + TOL):
            raise ContractError("quantities must lie in [0, qbar]")
        if np.any(r < -TOL) or np.any(r > 1.0 + TOL):
            raise ContractError("operation probabilities must lie in [0, 1]")
        if np.any(((q <= TOL) & (r > TOL)) | ((r <= TOL) & (q > TOL))):
            raise ContractError("q = 0 must pair with r = 0")
        ov = tuple(sorted((int(i), float(oq), float(orr)) for i, oq, orr in self.overrides))
        seen = set()
        for i, oq, orr in ov:
            if not 0 <= i < n or i in seen:
                raise ContractError(f"bad override index {i}")
            seen.add(i)
            if (oq <= TOL) != (orr <= TOL):
                raise ContractError(f"override at knot {i}: q = 0 must pair with r = 0")
            if i + 1 < n and orr < r[i + 1] - TOL:
                raise ContractError(f"override at knot {i} breaks operation monotonicity")
            if i >= 1 and orr > r[i] + TOL:
                raise ContractError(f"override at knot {i} breaks operation monotonicity")
        q.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "q_vals", q)
        object.__setattr__(self, "r_vals", r)
        object.__setattr__(self, "overrides", ov)
        object.__setattr__(self, "u_bar", float(self.u_bar))

    @classmethod
    def build(cls, env, q, r, overrides=None, u_bar: float = 0.0,
              normalize: bool = True) -> "FixedCostMechanism":
        q = np.array(q, dtype=float)
        r = np.array(r, dtype=float)
        ov = overrides or ()
        if isinstance(ov, dict):
            ov = tuple((i, vq, vr) for i, (vq, vr) in ov.items())
        if normalize:
            dead = (q <= TOL) | (r <= TOL)
            q = np.where(dead, 0.0, q)
            r = np.where(dead, 0.0, r)
            ov = tuple((i, 0.0, 0.0) if (vq <= TOL or vr <= TOL) else (i, vq, vr)
                       for i, vq, vr in ov)
        return cls(env, q, r, ov, u_bar)

    def point_q(self) -> np.ndarray:
        q = self.q_vals.copy()
        for i, oq, _ in self.overrides:
            q[i] = oq
        return q

    def point_r(self) -> np.ndarray:
        r = self.r_vals.copy()
        for i, _, orr in self.overrides:
            r[i] = orr
        return r

    def r_path(self) -> np.ndarray:
        r_pt = self.point_r()
        out = np.empty(2 * r_pt.size - 1)
        out[0::2] = r_pt
        out[1::2] = self.r_vals[1:]
        return out


def fc_envelope_rent(m: FixedCostMechanism) -> np.ndarray:
    """Rents u(theta) = u_bar + integral of r above theta (exact step sums)."""
    seg = m.r_vals[1:] * m.env.grid.steps
    u = np.zeros(m.env.grid.n)
    u[:-1] = np.cumsum(seg[::-1])[::-1]
    return u + m.u_bar


@dataclass(frozen=True)
class FcIcIrReport:
    ic: bool
    ir: bool
    violations: tuple

    @property
    def ok(self) -> bool:
        return self.ic and self.ir

    def __bool__(self) -> bool:
        return self.ok


def fc_check_ic_ir(m: FixedCostMechanism) -> FcIcIrReport:
    """Incentives bind on the operation rule: IC iff r decreases pointwise.

    Cross-checked against the pairwise deviation oracle
    u(theta_i) >= u(theta_j) + (theta_j - theta_i) r(theta_j).
    """
    path = m.r_path()
    rise = np.diff(path)
    bad = np.nonzero(rise > TOL)[0]
    ic = bad.size == 0

    u = fc_envelope_rent(m)
    r = m.point_r()
    th = m.env.grid.knots
    slack = u[:, None] - (u[None, :] + (th[None, :] - th[:, None]) * r[None, :])
    brute = bool(np.min(slack) >= -TOL)
    if brute != ic:
        raise InternalCheckError(
            f"fixed-cost IC characterization ({ic}) disagrees with the deviation oracle ({brute})")
    return FcIcIrReport(ic, m.u_bar >= 0.0, tuple(int(k) for k in bad[:20]))


def fc_total_surplus(env: FixedCostEnv, theta, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    ts = env.demand.value_array(q) - np.asarray(theta, dtype=float) - env.c * q
    return np.where(q > 0.0, ts, 0.0)


def fc_rs_profile(m: FixedCostMechanism, alpha: float) -> np.ndarray:
    """Regulator surplus r (V(q) - theta - c q) - (1 - alpha) u at every knot."""
    ts = fc_total_surplus(m.env, m.env.grid.knots, m.point_q())
    return m.point_r() * ts - (1.0 - alpha) * fc_envelope_rent(m)


def fc_compare(m: FixedCostMechanism, other: FixedCostMechanism,
               alpha: float) -> DominanceVerdict:
    for mm in (m, other):
        if not fc_check_ic_ir(mm):
            raise ContractError("comparison needs IC and IR mechanisms")
    diff = fc_rs_profile(m, alpha) - fc_rs_profile(other, alpha)
    lo, hi = float(np.min(diff)), float(np.max(diff))
    above = tuple(int(i) for i in np.nonzero(diff > 1e-12)[0])
    below = tuple(int(i) for i in np.nonzero(diff < -1e-12)[0])
    if not above and not below:
        return DominanceVerdict(Relation.EQUAL, (), lo, hi)
    if not below:
        return DominanceVerdict(Relation.DOMINATES, above, lo, hi)
    if not above:
        return DominanceVerdict(Relation.DOMINATED_BY, below, lo, hi)
    return DominanceVerdict(Relation.INCOMPARABLE, above + below, lo, hi)


class FcStatus(enum.Enum):
    DOMINATED = "dominated"
    UNDOMINATED = "undominated"


@dataclass(frozen=True, eq=False)
class FcClassification:
    status: FcStatus
    witness: FixedCostMechanism | None
    conditions: dict


def _fc_witness(m: FixedCostMechanism) -> FixedCostMechanism:
    """Efficient quantities, left-continuous operation, full service at the bottom."""
    env = m.env
    qe = env.q_efficient
    q = np.where(m.r_vals > TOL, qe, 0.0)
    r = m.r_vals.copy()
    overrides = []
    for i, oq, orr in m.overrides:
        if i == 0:
            continue
        if orr < m.r_vals[i] - TOL:
            continue  # left-discontinuity: restore the interval values
        overrides.append((i, qe if orr > TOL else 0.0, orr))
    q[0], r[0] = qe, 1.0
    return FixedCostMechanism(env, q, r, tuple(overrides), 0.0)


def fc_classify(m: FixedCostMechanism, alphas=(0.0, 0.5, 0.9)) -> FcClassification:
    """Complete classification in the fixed-cost model.

    Undominated exactly when the operation rule is left continuous, the
    lowest type operates for sure, the top rent is zero, and the quantity is
    efficient at every operating point. Otherwise returns a witness built by
    enforcing those four properties, verified to dominate at every supplied
    welfare weight.
    """
    report = fc_check_ic_ir(m)
    if not report:
        raise ContractError("classification needs an IC and IR mechanism")
    env = m.env
    qe = env.q_efficient
    q_pt, r_pt = m.point_q(), m.point_r()

    operating = r_pt > TOL
    eff_ok = bool(np.all(np.abs(q_pt[operating] - qe) <= TOL)) and bool(
        np.all(np.abs(m.q_vals[m.r_vals > TOL] - qe) <= TOL))
    lc_ok = all(not (i >= 1 and orr < m.r_vals[i] - TOL) for i, _, orr in m.overrides)
    bottom_ok = bool(r_pt[0] >= 1.0 - TOL)
    rent_ok = bool(0.0 <= m.u_bar <= TOL)
    conditions = {
        "efficient_quantity": eff_ok,
        "left_continuous_r": lc_ok,
        "full_operation_at_bottom": bottom_ok,
        "zero_top_rent": rent_ok,
    }
    if all(conditions.values()):
        return FcClassification(FcStatus.UNDOMINATED, None, conditions)

    witness = _fc_witness(m)
    for a in alphas:
        verdict = fc_compare(witness, m, a)
        if verdict.relation is not Relation.DOMINATES:
            raise InternalCheckError(
                f"fixed-cost witness fails to dominate at alpha={a} ({verdict.relation})")
    return FcClassification(FcStatus.DOMINATED, witness, conditions)
