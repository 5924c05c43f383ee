"""Regulatory mechanisms as left-continuous step functions on the type grid.

A mechanism stores an operation probability r and a quantity q per grid
interval: entry i >= 1 applies on the half-open interval (theta_{i-1},
theta_i], entry 0 applies at the single point theta_0, so the base
representation is left continuous by construction. Measure-zero behavior
at individual knots is modeled with explicit overrides. The rent of the
highest type pins the whole rent schedule through the envelope formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, InternalCheckError
from .market import TOL, MarketEnv, total_surplus_array


@dataclass(frozen=True, eq=False)
class Mechanism:
    """An (r, q, u) mechanism on the grid of a market environment.

    ``overrides`` replaces the (q, r) pair exactly at single knots; each
    entry is (knot index, q, r). Overrides carry measure zero, so they never
    enter rent or expected-surplus integrals, but every pointwise predicate
    sees them.
    """

    env: MarketEnv
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
        _check_zero_pairing(q, r, "base profile")
        ov = tuple(sorted((int(i), float(oq), float(orr)) for i, oq, orr in self.overrides))
        seen = set()
        for i, oq, orr in ov:
            if not 0 <= i < n:
                raise ContractError(f"override index {i} outside the grid")
            if i in seen:
                raise ContractError(f"duplicate override at knot {i}")
            seen.add(i)
            if not (-TOL <= oq <= qbar + TOL) or not (-TOL <= orr <= 1.0 + TOL):
                raise ContractError(f"override at knot {i} outside [0,qbar]x[0,1]")
            _check_zero_pairing(np.array([oq]), np.array([orr]), f"override at knot {i}")
        x = q * r
        for i, oq, orr in ov:
            prod = oq * orr
            if i + 1 < n and prod < x[i + 1] - TOL:
                raise ContractError(
                    f"override at knot {i} breaks monotonicity from below (qr={prod:.9g})")
            if i >= 1 and prod > x[i] + TOL:
                raise ContractError(
                    f"override at knot {i} breaks monotonicity from above (qr={prod:.9g})")
        q.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "q_vals", q)
        object.__setattr__(self, "r_vals", r)
        object.__setattr__(self, "overrides", ov)
        object.__setattr__(self, "u_bar", float(self.u_bar))

    # -- construction helpers ------------------------------------------------

    @classmethod
    def build(cls, env: MarketEnv, q, r, overrides=None, u_bar: float = 0.0,
              normalize: bool = True) -> "Mechanism":
        """Build a mechanism, optionally normalizing so q = 0 iff r = 0.

        Normalization zeroes q wherever r = 0 and vice versa; the product is
        zero at such points either way, so payoffs are unaffected.
        """
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

    @classmethod
    def from_rules(cls, env: MarketEnv, q_rule, r_rule=None, u_bar: float = 0.0) -> "Mechanism":
        """Sample continuous rules at interval right endpoints.

        ``q_rule`` maps theta to quantity; ``r_rule`` defaults to full
        operation wherever the sampled quantity is positive.
        """
        knots = env.grid.knots
        q = np.array([max(0.0, float(q_rule(t))) for t in knots])
        if r_rule is None:
            r = np.where(q > 0.0, 1.0, 0.0)
        else:
            r = np.array([float(r_rule(t)) for t in knots])
        return cls.build(env, q, r, u_bar=u_bar)

    @classmethod
    def zero(cls, env: MarketEnv) -> "Mechanism":
        n = env.grid.n
        return cls(env, np.zeros(n), np.zeros(n))

    @classmethod
    def efficient(cls, env: MarketEnv) -> "Mechanism":
        """Full operation at the efficient quantity of every type."""
        q = env.demand.inverse_array(env.grid.knots)
        return cls(env, q, np.ones(env.grid.n))

    # -- pointwise views -----------------------------------------------------

    @property
    def override_map(self) -> dict:
        return {i: (oq, orr) for i, oq, orr in self.overrides}

    def point_q(self) -> np.ndarray:
        """Quantity at each knot, override-aware."""
        q = self.q_vals.copy()
        for i, oq, _ in self.overrides:
            q[i] = oq
        return q

    def point_r(self) -> np.ndarray:
        """Operation probability at each knot, override-aware."""
        r = self.r_vals.copy()
        for i, _, orr in self.overrides:
            r[i] = orr
        return r

    def product_intervals(self) -> np.ndarray:
        return self.q_vals * self.r_vals

    def product_points(self) -> np.ndarray:
        return self.point_q() * self.point_r()

    def product_path(self) -> np.ndarray:
        """The product qr along the type axis: knot, open interval, knot, ...

        Returns the length 2N-1 sequence [x(theta_0), x on (theta_0,theta_1),
        x(theta_1), ...]; pointwise monotonicity of qr is monotonicity of
        this sequence.
        """
        x_int = self.product_intervals()
        x_pt = self.product_points()
        out = np.empty(2 * x_int.size - 1)
        out[0::2] = x_pt
        out[1::2] = x_int[1:]
        return out

    def with_env(self, env: MarketEnv) -> "Mechanism":
        """The same decision profile reinterpreted in another environment."""
        return Mechanism(env, self.q_vals, self.r_vals, self.overrides, self.u_bar)

    def replace(self, q_vals=None, r_vals=None, overrides=None, u_bar=None) -> "Mechanism":
        return Mechanism(
            self.env,
            self.q_vals if q_vals is None else q_vals,
            self.r_vals if r_vals is None else r_vals,
            self.overrides if overrides is None else overrides,
            self.u_bar if u_bar is None else u_bar,
        )


def _check_zero_pairing(q: np.ndarray, r: np.ndarray, where: str) -> None:
    bad = ((q <= TOL) & (r > TOL)) | ((r <= TOL) & (q > TOL))
    if np.any(bad):
        raise ContractError(f"q = 0 must pair with r = 0 ({where})")


# ---------------------------------------------------------------------------
# Rents and subsidies
# ---------------------------------------------------------------------------

def envelope_rent(m: Mechanism) -> np.ndarray:
    """Rent at every knot: u(theta) = u_bar + integral of qr above theta.

    The integral is exact for the step representation; overrides carry
    measure zero and do not enter.
    """
    seg = m.product_intervals()[1:] * m.env.grid.steps
    u = np.zeros(m.env.grid.n)
    u[:-1] = np.cumsum(seg[::-1])[::-1]
    return u + m.u_bar


def subsidy(m: Mechanism) -> np.ndarray:
    """Per-knot subsidy implied by the rent schedule; NaN where r = 0.

    Inverts the profit identity u = (q P(q) - c - theta q + s) r at each
    operating knot.
    """
    u = envelope_rent(m)
    q, r = m.point_q(), m.point_r()
    knots = m.env.grid.knots
    with np.errstate(divide="ignore", invalid="ignore"):
        profit = q * m.env.demand.price_array(np.maximum(q, 1e-300)) - m.env.c - knots * q
        s = u / r - profit
    return np.where(r > TOL, s, np.nan)


def check_ir(m: Mechanism) -> bool:
    """Participation holds for every type iff the highest type keeps u >= 0."""
    return m.u_bar >= 0.0


@dataclass(frozen=True)
class IcReport:
    ok: bool
    product_decreasing: bool
    envelope_consistent: bool
    brute_force_ok: bool
    violations: tuple  # (kind, position, magnitude)

    def __bool__(self) -> bool:
        return self.ok


def _product_decreasing(m: Mechanism) -> tuple:
    path = m.product_path()
    rise = np.diff(path)
    bad = np.nonzero(rise > TOL)[0]
    return bad.size == 0, tuple(("qr-increasing", int(k), float(rise[k])) for k in bad[:20])


def is_ic(m: Mechanism) -> bool:
    """Characterization-only incentive check (decreasing product qr)."""
    return _product_decreasing(m)[0]


def check_ic(m: Mechanism, brute_force: bool = True) -> IcReport:
    """Incentive-compatibility check with an independent deviation oracle.

    The characterization verdict (pointwise decreasing product plus envelope
    rents) is cross-checked against the pairwise deviation oracle
    u(theta_i) >= u(theta_j) + (theta_j - theta_i) q(theta_j) r(theta_j)
    over all knot pairs; a disagreement raises, since both must coincide
    for exact step mechanisms.
    """
    decreasing, violations = _product_decreasing(m)
    envelope_ok = True  # rents are generated from u_bar by the envelope formula
    verdict = decreasing and envelope_ok

    brute_ok = verdict
    if brute_force:
        u = envelope_rent(m)
        x = m.product_points()
        th = m.env.grid.knots
        # u[i] >= u[j] + (th[j] - th[i]) * x[j] for all i, j
        slack = u[:, None] - (u[None, :] + (th[None, :] - th[:, None]) * x[None, :])
        brute_ok = bool(np.min(slack) >= -TOL)
        if brute_ok != verdict:
            raise InternalCheckError(
                f"IC characterization ({verdict}) disagrees with the deviation oracle ({brute_ok})")
        if not brute_ok:
            i, j = np.unravel_index(np.argmin(slack), slack.shape)
            violations = violations + (("profitable-deviation", (int(i), int(j)), float(slack[i, j])),)
    return IcReport(verdict, decreasing, envelope_ok, brute_ok, violations)


def require_ic_ir(m: Mechanism, what: str = "mechanism") -> None:
    if not is_ic(m):
        raise ContractError(f"{what} is not incentive compatible")
    if not check_ir(m):
        raise ContractError(f"{what} is not individually rational")


# ---------------------------------------------------------------------------
# Surpluses
# ---------------------------------------------------------------------------

def ts_profile(m: Mechanism, use_overrides: bool = True) -> np.ndarray:
    """Total surplus at each knot for the knot's own quantity."""
    q = m.point_q() if use_overrides else m.q_vals
    return total_surplus_array(m.env, m.env.grid.knots, q)


def rs_profile(m: Mechanism, alpha: float | None = None, use_overrides: bool = True) -> np.ndarray:
    """Regulator surplus r TS - (1 - alpha) u at every knot.

    ``alpha`` defaults to the environment's welfare weight; passing an
    explicit value reweights the same mechanism without rebuilding it.
    With ``use_overrides=False`` the measure-zero knot overrides are ignored,
    which is the right view for integration against a prior.
    """
    a = m.env.alpha if alpha is None else alpha
    r = m.point_r() if use_overrides else m.r_vals
    return r * ts_profile(m, use_overrides) - (1.0 - a) * envelope_rent(m)


def cs_profile(m: Mechanism) -> np.ndarray:
    """Consumer surplus r (V - c - theta q) - u at every knot."""
    q, r = m.point_q(), m.point_r()
    th = m.env.grid.knots
    gross = np.where(q > 0.0, m.env.demand.value_array(q) - m.env.c - th * q, 0.0)
    return r * gross - envelope_rent(m)


def regulator_surplus(m: Mechanism, theta: float, alpha: float | None = None) -> float:
    return float(rs_profile(m, alpha)[m.env.grid.index_of(theta)])


def consumer_surplus(m: Mechanism, theta: float) -> float:
    return float(cs_profile(m)[m.env.grid.index_of(theta)])


@dataclass(frozen=True)
class SurplusProfile:
    """Per-knot rent, subsidy, consumer/total/regulator surplus tables."""

    theta: np.ndarray
    u: np.ndarray
    s: np.ndarray
    cs: np.ndarray
    ts: np.ndarray
    rs: np.ndarray

    @classmethod
    def of(cls, m: Mechanism, alpha: float | None = None) -> "SurplusProfile":
        return cls(m.env.grid.knots, envelope_rent(m), subsidy(m),
                   cs_profile(m), ts_profile(m), rs_profile(m, alpha))


# ---------------------------------------------------------------------------
# Structure predicates
# ---------------------------------------------------------------------------

# Classification codes along the type axis: full operation, randomized
# operation at the floor, shutdown. Valid mechanisms run through them in
# nondecreasing order.
_FULL, _RANDOM, _SHUT = 0, 1, 2


def _classify_point(qfloor: float, q: float, r: float) -> tuple:
    """Map one (q, r) point to a partition class, or (None, reason)."""
    if r >= 1.0 - TOL:
        if q >= qfloor - TOL:
            return _FULL, ""
        return None, f"full operation below the quantity floor (q={q:.9g})"
    if r <= TOL:
        if q <= TOL:
            return _SHUT, ""
        return None, f"shutdown with positive quantity (q={q:.9g})"
    if abs(q - qfloor) <= TOL:
        return _RANDOM, ""
    return None, f"randomized operation away from the floor (q={q:.9g}, r={r:.9g})"


@dataclass(frozen=True)
class Partition:
    """Index ranges of the three intervals of a floor-randomized mechanism.

    Each range is a (start, stop) pair over knots, possibly empty, ordered
    full-operation, then randomized-at-floor, then shutdown.
    """

    full: tuple
    randomized: tuple
    shutdown: tuple


@dataclass(frozen=True)
class PartitionResult:
    ok: bool
    partition: Partition | None
    reason: str
    knot: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def partition_floor_randomized(m: Mechanism) -> PartitionResult:
    """Decide whether a mechanism is floor randomized and split the types.

    Requires incentive compatibility, participation, a zero rent for the
    highest type, and the pointwise three-interval structure: full operation
    at or above the quantity floor, then randomized operation exactly at the
    floor, then shutdown.
    """
    if not is_ic(m):
        return PartitionResult(False, None, "not incentive compatible", None)
    if not check_ir(m):
        return PartitionResult(False, None, "not individually rational", None)
    if abs(m.u_bar) > TOL:
        return PartitionResult(False, None, f"highest type keeps rent u_bar={m.u_bar:.9g}", None)

    qfloor = m.env.qfloor
    q_pt, r_pt = m.point_q(), m.point_r()
    classes = []  # along the path knot, interval, knot, ...
    for i in range(m.env.grid.n):
        if i >= 1:
            ci, why = _classify_point(qfloor, m.q_vals[i], m.r_vals[i])
            if ci is None:
                return PartitionResult(False, None, why, i)
            classes.append((ci, i))
        cp, why = _classify_point(qfloor, q_pt[i], r_pt[i])
        if cp is None:
            return PartitionResult(False, None, why, i)
        classes.append((cp, i))

    codes = [c for c, _ in classes]
    for k in range(1, len(codes)):
        if codes[k] < codes[k - 1]:
            return PartitionResult(
                False, None, "intervals out of order (operation must shrink with cost)",
                classes[k][1])

    knot_codes = np.array([codes[2 * i] for i in range(m.env.grid.n)])

    def _range(code):
        idx = np.nonzero(knot_codes == code)[0]
        return (int(idx[0]), int(idx[-1]) + 1) if idx.size else (0, 0)

    part = Partition(_range(_FULL), _range(_RANDOM), _range(_SHUT))
    return PartitionResult(True, part, "", None)


@dataclass(frozen=True)
class PredicateResult:
    ok: bool
    witnesses: tuple  # knot indices where the predicate fails

    def __bool__(self) -> bool:
        return self.ok


def check_dd(m: Mechanism) -> PredicateResult:
    """Downward distortion: q never above the efficient quantity, equal at theta_low.

    Interval values are compared against the efficient quantity at their
    right endpoint, which is where a constant quantity binds against the
    strictly decreasing efficient rule.
    """
    qe = m.env.demand.inverse_array(m.env.grid.knots)
    q_pt = m.point_q()
    bad = set(np.nonzero(q_pt > qe + TOL)[0].tolist())
    bad |= set(np.nonzero(m.q_vals > qe + TOL)[0].tolist())
    if abs(q_pt[0] - qe[0]) > TOL:
        bad.add(0)
    return PredicateResult(len(bad) == 0, tuple(sorted(bad)))


def check_strict_dd(m: Mechanism) -> PredicateResult:
    """Downward distortion with a strict gap at every type above the lowest."""
    base = check_dd(m)
    if not base.ok:
        return base
    qe = m.env.demand.inverse_array(m.env.grid.knots)
    q_pt = m.point_q()
    bad = set(np.nonzero(q_pt[1:] >= qe[1:] - TOL)[0] + 1)
    bad |= set(np.nonzero(m.q_vals[1:] >= qe[1:] - TOL)[0] + 1)
    return PredicateResult(len(bad) == 0, tuple(int(i) for i in sorted(bad)))


def check_left_continuity(m: Mechanism) -> PredicateResult:
    """The product qr has no override-induced jump away from its left limit.

    The base step representation is left continuous by construction, so only
    overrides at knots above the lowest type can break the property.
    """
    x_int = m.product_intervals()
    bad = []
    for i, oq, orr in m.overrides:
        if i == 0:
            continue  # nothing lies left of the lowest type
        if abs(oq * orr - x_int[i]) > TOL:
            bad.append(i)
    return PredicateResult(not bad, tuple(bad))
