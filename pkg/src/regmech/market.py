"""Inverse demand primitives and the regulated market environment.

Houses the demand families (linear, logit discrete-choice, tabulated),
the consumer value function, the efficient quantity rule, the quantity
floor, the concave closure of net value, assumption validation, and
demand rotations that pin the efficient quantity of the lowest cost type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, ContractError, DomainError, InternalCheckError

# Absolute tolerance for root finding and equality comparisons against
# model quantities (quantity floor, efficient quantity, 0, 1).
TOL = 1e-9

_BISECT_MAX_ITER = 200


def _bisect(f, lo: float, hi: float, tol: float = TOL) -> float:
    """Find the root of an increasing function on [lo, hi] by bisection."""
    flo, fhi = f(lo), f(hi)
    if flo > 0.0 or fhi < 0.0:
        raise DomainError(f"root not bracketed on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
    for _ in range(_BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


class Demand:
    """A strictly decreasing inverse demand curve on [0, qbar].

    Subclasses provide ``price`` (inverse demand), ``value`` (its integral),
    ``inverse`` (the direct demand), and ``qbar`` (the quantity at which the
    price reaches zero).
    """

    family: str
    qbar: float

    def price(self, q: float) -> float:
        raise NotImplementedError

    def value(self, q: float) -> float:
        raise NotImplementedError

    def inverse(self, p: float) -> float:
        raise NotImplementedError

    def price_array(self, q: np.ndarray) -> np.ndarray:
        return np.vectorize(self.price, otypes=[float])(q)

    def value_array(self, q: np.ndarray) -> np.ndarray:
        return np.vectorize(self.value, otypes=[float])(q)

    def inverse_array(self, p: np.ndarray) -> np.ndarray:
        return np.vectorize(self.inverse, otypes=[float])(p)

    def slope_magnitude(self, q: float) -> float:
        """|P'(q)|, available for the differentiable families only."""
        raise ContractError(f"{self.family} demand does not expose a demand slope")

    def curvature_sign(self, q_lo: float, q_hi: float) -> int:
        """Sign of P'' on [q_lo, q_hi]: -1 concave, 0 linear, +1 convex.

        Raises ContractError if the curvature changes sign on the interval
        or the family is not twice continuously differentiable.
        """
        raise ContractError(f"{self.family} demand has no classified curvature")

    def rotate(self, new_slope: float) -> "Demand":
        """Counter-clockwise rotation; only parametric families support it."""
        raise ContractError(f"{self.family} demand cannot be rotated")

    def unregulated_cs(self, q: float) -> float:
        """Consumer surplus V(q) - q P(q) retained at uniform price P(q)."""
        if q <= 0.0:
            return 0.0
        return self.value(q) - q * self.price(q)

    def _check_domain_q(self, q: float) -> None:
        if not (-TOL <= q <= self.qbar + TOL):
            raise DomainError(f"quantity {q} outside [0, {self.qbar}]")


@dataclass(frozen=True)
class LinearDemand(Demand):
    """P(q) = a - b q with intercept a > 0 and slope b > 0."""

    a: float
    b: float
    family: str = field(default="linear", init=False)

    def __post_init__(self):
        if self.a <= 0.0 or self.b <= 0.0:
            raise DomainError("linear demand needs a > 0 and b > 0")

    @property
    def qbar(self) -> float:
        return self.a / self.b

    def price(self, q: float) -> float:
        self._check_domain_q(q)
        return self.a - self.b * q

    def value(self, q: float) -> float:
        self._check_domain_q(q)
        return self.a * q - 0.5 * self.b * q * q

    def inverse(self, p: float) -> float:
        if not (-TOL <= p <= self.a + TOL):
            raise DomainError(f"price {p} outside [0, {self.a}]")
        return (self.a - p) / self.b

    def price_array(self, q):
        return self.a - self.b * np.asarray(q, dtype=float)

    def value_array(self, q):
        q = np.asarray(q, dtype=float)
        return self.a * q - 0.5 * self.b * q * q

    def inverse_array(self, p):
        return (self.a - np.asarray(p, dtype=float)) / self.b

    def slope_magnitude(self, q: float) -> float:
        return self.b

    def curvature_sign(self, q_lo: float, q_hi: float) -> int:
        return 0

    def rotate(self, new_slope: float, pivot_theta: float | None = None) -> "LinearDemand":
        raise ContractError("use market.rotate(env, new_slope); the pivot depends on theta_low")


@dataclass(frozen=True)
class LogitDemand(Demand):
    """Discrete-choice inverse demand P(q) = V - beta ln(q / (1 - q)), q in (0, 1).

    The price reaches zero at qbar = 1 / (1 + exp(-V / beta)) and diverges
    as q -> 0, so price evaluation at exactly q = 0 returns +inf while the
    value integral remains finite.
    """

    V: float
    beta: float
    family: str = field(default="logit", init=False)

    def __post_init__(self):
        if self.beta <= 0.0:
            raise DomainError("logit demand needs beta > 0")

    @property
    def qbar(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.V / self.beta))

    def price(self, q: float) -> float:
        self._check_domain_q(q)
        if q <= 0.0:
            return math.inf
        q = min(q, self.qbar)
        return self.V - self.beta * math.log(q / (1.0 - q))

    def value(self, q: float) -> float:
        # V(q) = V q + beta * H(q) with H the binary entropy in nats.
        self._check_domain_q(q)
        if q <= 0.0:
            return 0.0
        q = min(q, self.qbar)
        ent = -q * math.log(q) - (1.0 - q) * math.log(1.0 - q)
        return self.V * q + self.beta * ent

    def inverse(self, p: float) -> float:
        if p < -TOL:
            raise DomainError(f"price {p} below 0")
        z = (self.V - p) / self.beta
        return 1.0 / (1.0 + math.exp(-z))

    def inverse_array(self, p):
        z = (self.V - np.asarray(p, dtype=float)) / self.beta
        return 1.0 / (1.0 + np.exp(-z))

    def price_array(self, q):
        q = np.minimum(np.asarray(q, dtype=float), self.qbar)
        with np.errstate(divide="ignore"):
            return np.where(q > 0.0, self.V - self.beta * np.log(q / (1.0 - q)), np.inf)

    def value_array(self, q):
        q = np.minimum(np.asarray(q, dtype=float), self.qbar)
        safe = np.clip(q, 1e-300, 1.0 - 1e-16)
        ent = -safe * np.log(safe) - (1.0 - safe) * np.log1p(-safe)
        return np.where(q > 0.0, self.V * q + self.beta * ent, 0.0)

    def unregulated_cs(self, q: float) -> float:
        # V(q) - q P(q) collapses to -beta ln(1 - q), finite as q -> 0.
        if q <= 0.0:
            return 0.0
        return -self.beta * math.log(1.0 - min(q, self.qbar))

    def slope_magnitude(self, q: float) -> float:
        if q <= 0.0 or q >= 1.0:
            raise DomainError("logit slope defined on (0, 1)")
        return self.beta / (q * (1.0 - q))

    def curvature_sign(self, q_lo: float, q_hi: float) -> int:
        # P'' = beta (1 - 2q) / (q (1-q))^2: convex below q = 1/2, concave above.
        if q_hi <= 0.5:
            return 1
        if q_lo >= 0.5:
            return -1
        raise ContractError(
            f"logit curvature changes sign on [{q_lo}, {q_hi}] (straddles q = 0.5)"
        )


@dataclass(frozen=True)
class TabulatedDemand(Demand):
    """Piecewise-linear inverse demand through sorted (quantity, price) points.

    Quantities must start at 0, increase strictly, and end where the price
    reaches zero; the value integral is exact trapezoid accumulation on the
    breakpoints. Prices are validated to be nonincreasing at construction;
    strictness is a market assumption checked by ``validate_assumptions``.
    """

    quantities: tuple
    prices: tuple
    family: str = field(default="tabulated", init=False)

    def __post_init__(self):
        q = np.asarray(self.quantities, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if q.ndim != 1 or q.shape != p.shape or q.size < 2:
            raise DomainError("tabulated demand needs matching 1-d breakpoint arrays")
        if abs(q[0]) > TOL:
            raise DomainError("tabulated demand must start at quantity 0")
        if np.any(np.diff(q) <= 0):
            raise DomainError("tabulated quantities must increase strictly")
        if np.any(np.diff(p) > 0):
            raise DomainError("tabulated prices must not increase")
        if abs(p[-1]) > TOL:
            raise DomainError("tabulated demand must end at price 0")

    @property
    def qbar(self) -> float:
        return float(self.quantities[-1])

    def price(self, q: float) -> float:
        self._check_domain_q(q)
        return float(np.interp(q, self.quantities, self.prices))

    def price_array(self, q):
        return np.interp(np.asarray(q, dtype=float), self.quantities, self.prices)

    def value(self, q: float) -> float:
        self._check_domain_q(q)
        qs = np.asarray(self.quantities, dtype=float)
        ps = np.asarray(self.prices, dtype=float)
        q = min(max(q, 0.0), self.qbar)
        k = int(np.searchsorted(qs, q, side="right"))
        full = np.trapezoid(ps[:k], qs[:k]) if k > 1 else 0.0
        if k <= 0 or q <= qs[k - 1]:
            return float(full)
        p_at = self.price(q)
        return float(full + 0.5 * (ps[k - 1] + p_at) * (q - qs[k - 1]))

    def inverse(self, p: float) -> float:
        p0 = float(self.prices[0])
        if not (-TOL <= p <= p0 + TOL):
            raise DomainError(f"price {p} outside [0, {p0}]")
        p = min(max(p, 0.0), p0)
        return _bisect(lambda q: p - self.price(q), 0.0, self.qbar)


@dataclass(frozen=True)
class TypeGrid:
    """Strictly increasing marginal-cost knots with exact endpoints."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1 or knots.size < 2:
            raise DomainError("grid needs at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise DomainError("grid knots must increase strictly")
        knots.setflags(write=False)

    @classmethod
    def uniform(cls, theta_low: float, theta_high: float, n: int) -> "TypeGrid":
        if n < 2:
            raise DomainError("grid size must be at least 2")
        return cls(np.linspace(theta_low, theta_high, n))

    @property
    def n(self) -> int:
        return int(self.knots.size)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def trapezoid_weights(self) -> np.ndarray:
        d = np.diff(self.knots)
        w = np.zeros(self.n)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        return w

    def index_of(self, theta: float) -> int:
        """Index of the knot equal to theta; raises if theta is not a knot."""
        i = int(np.searchsorted(self.knots, theta))
        for j in (i - 1, i, i + 1):
            if 0 <= j < self.n and abs(self.knots[j] - theta) <= 1e-12:
                return j
        raise ContractError(f"theta={theta} is not a grid knot")


@dataclass(frozen=True)
class MarketEnv:
    """A regulated market: cost bounds, fixed cost, welfare weight, demand, grid.

    Construction computes and caches the quantity floor and enforces the
    joint operability assumption (positive total surplus at the efficient
    quantity of the highest cost type).
    """

    theta_low: float
    theta_high: float
    c: float
    alpha: float
    demand: Demand
    grid: TypeGrid
    qfloor: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.theta_low < self.theta_high):
            raise DomainError("need 0 < theta_low < theta_high")
        if self.c <= 0.0:
            raise DomainError("fixed cost c must be positive")
        if not (0.0 <= self.alpha < 1.0):
            raise DomainError("alpha must lie in [0,1)")
        k = self.grid.knots
        if abs(k[0] - self.theta_low) > 1e-12 or abs(k[-1] - self.theta_high) > 1e-12:
            raise DomainError("grid endpoints must equal the type bounds")
        qe_high = self.demand.inverse(self.theta_high)
        ts_high = self.demand.value(qe_high) - self.c - self.theta_high * qe_high
        if ts_high <= 0.0:
            raise AssumptionError(
                f"highest type cannot operate: TS(theta_high, q_e) = {ts_high:.6g} <= 0"
            )
        object.__setattr__(self, "qfloor", _solve_qfloor(self.demand, self.c))
        if not (0.0 < self.qfloor < self.demand.qbar) or self.qfloor >= qe_high:
            raise AssumptionError("quantity floor must lie strictly below q_e(theta_high)")

    @classmethod
    def build(cls, demand: Demand, c: float, theta_low: float, theta_high: float,
              alpha: float, grid_n: int = 2001) -> "MarketEnv":
        return cls(theta_low, theta_high, c, alpha, demand,
                   TypeGrid.uniform(theta_low, theta_high, grid_n))


def _solve_qfloor(demand: Demand, c: float) -> float:
    """Unique q with V(q) - q P(q) = c, by bisection on the increasing map."""
    top = demand.unregulated_cs(demand.qbar)
    if c >= top:
        raise AssumptionError(
            f"fixed cost {c} at or above the maximal unregulated consumer surplus {top:.6g}"
        )
    return _bisect(lambda q: demand.unregulated_cs(q) - c, 0.0, demand.qbar)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def value(env: MarketEnv, q: float) -> float:
    """Gross consumer value: the integral of the inverse demand up to q."""
    return env.demand.value(q)


def price(env: MarketEnv, q: float) -> float:
    """Market-clearing price for quantity q."""
    return env.demand.price(q)


def inverse_price(env: MarketEnv, p: float) -> float:
    """Quantity demanded at price p (inverse of ``price``)."""
    return env.demand.inverse(p)


def quantity_floor(env: MarketEnv) -> float:
    """The cached quantity floor: unregulated consumer surplus equals c there."""
    return env.qfloor


def efficient_quantity(env: MarketEnv, theta: float) -> float:
    """Total-surplus-maximizing quantity for marginal cost theta."""
    if not (env.theta_low - TOL <= theta <= env.theta_high + TOL):
        raise DomainError(f"theta={theta} outside [{env.theta_low}, {env.theta_high}]")
    return env.demand.inverse(theta)


def efficient_quantity_array(env: MarketEnv, thetas: np.ndarray) -> np.ndarray:
    return env.demand.inverse_array(thetas)


def total_surplus(env: MarketEnv, theta: float, q: float) -> float:
    """V(q) - c - theta q when q > 0 and zero when the firm does not produce."""
    if q <= 0.0:
        return 0.0
    return env.demand.value(q) - env.c - theta * q


def total_surplus_array(env: MarketEnv, thetas: np.ndarray, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    ts = env.demand.value_array(q) - env.c - np.asarray(thetas, dtype=float) * q
    return np.where(q > 0.0, ts, 0.0)


def concave_closure_value(env: MarketEnv, q: float) -> float:
    """Concave closure of the net value (V(q) - c) 1{q > 0}.

    Linear with slope P(qfloor) below the floor, V(q) - c above it; the two
    branches meet continuously at the floor by its defining equation.
    """
    env.demand._check_domain_q(q)
    if q < env.qfloor:
        return q * env.demand.price(env.qfloor)
    return env.demand.value(q) - env.c


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]


def validate_assumptions(env: MarketEnv, sample_size: int = 10_000) -> ValidationReport:
    """Check the market assumptions and the floor bounds on a dense sample.

    Verifies strict monotonicity of the inverse demand, a zero price at qbar,
    operability of the highest type, and at every grid knot both the bound
    q_e(theta) > qfloor and a positive total surplus at the floor quantity.
    """
    checks = []
    d = env.demand

    lo = max(1e-9 * d.qbar, 1e-12)
    qs = np.unique(np.concatenate([
        np.linspace(lo, d.qbar, sample_size),
        np.clip(d.inverse_array(env.grid.knots), lo, d.qbar),
    ]))
    ps = d.price_array(qs)
    rising = np.nonzero(np.diff(ps) >= 0)[0]
    if rising.size:
        q_bad = float(qs[rising[0] + 1])
        checks.append(ValidationCheck(
            "price-strictly-decreasing", False,
            f"price fails to decrease strictly at q={q_bad:.9g}"))
    else:
        checks.append(ValidationCheck("price-strictly-decreasing", True, ""))

    p_end = d.price(d.qbar)
    checks.append(ValidationCheck(
        "price-zero-at-qbar", abs(p_end) <= TOL, f"P(qbar)={p_end:.3g}"))

    qe_high = d.inverse(env.theta_high)
    ts_high = d.value(qe_high) - env.c - env.theta_high * qe_high
    checks.append(ValidationCheck(
        "highest-type-operable", ts_high > 0.0,
        f"TS(theta_high, q_e(theta_high))={ts_high:.9g}"))

    qe = d.inverse_array(env.grid.knots)
    ok_floor = bool(np.all(qe > env.qfloor))
    checks.append(ValidationCheck(
        "efficient-above-floor", ok_floor,
        "" if ok_floor else f"q_e <= qfloor at theta={env.grid.knots[np.argmin(qe - env.qfloor)]:.6g}"))

    ts_floor = total_surplus_array(env, env.grid.knots, np.full(env.grid.n, env.qfloor))
    ok_ts = bool(np.all(ts_floor > 0.0))
    checks.append(ValidationCheck(
        "positive-surplus-at-floor", ok_ts,
        "" if ok_ts else f"TS(theta, qfloor) <= 0 at theta={env.grid.knots[np.argmin(ts_floor)]:.6g}"))

    return ValidationReport(tuple(checks))


def rotate(env: MarketEnv, new_slope: float) -> Demand:
    """Rotate the demand counter-clockwise around (P^-1(theta_low), theta_low).

    For linear demand the new intercept solves b (a_n - theta_low)
    = b_n (a - theta_low); for logit demand the new quality level solves
    beta (V_n - theta_low) = beta_n (V - theta_low). The rotated curve is
    flatter (new slope parameter strictly smaller), crosses the original at
    the efficient quantity of the lowest type, and the difference between
    the old and new prices decreases strictly in quantity.
    """
    d = env.demand
    t0 = env.theta_low
    if isinstance(d, LinearDemand):
        if not new_slope < d.b:
            raise ContractError(f"rotation needs a strictly smaller slope (got {new_slope} >= {d.b})")
        if new_slope <= 0.0:
            raise ContractError("rotated slope must stay positive")
        a_n = t0 + (new_slope / d.b) * (d.a - t0)
        rotated: Demand = LinearDemand(a_n, new_slope)
    elif isinstance(d, LogitDemand):
        if not new_slope < d.beta:
            raise ContractError(f"rotation needs a strictly smaller scale (got {new_slope} >= {d.beta})")
        if new_slope <= 0.0:
            raise ContractError("rotated scale must stay positive")
        v_n = t0 + (new_slope / d.beta) * (d.V - t0)
        rotated = LogitDemand(v_n, new_slope)
    else:
        raise ContractError(f"{d.family} demand cannot be rotated")

    pivot_q = d.inverse(t0)
    got = rotated.price(pivot_q)
    if abs(got - t0) > 1e-7:
        raise InternalCheckError(
            f"rotated demand misses the pivot: P_n(q_e(theta_low))={got}, want {t0}")
    hi = min(d.qbar, rotated.qbar)
    qs = np.linspace(max(1e-9, 1e-9 * hi), hi, 1001)
    gap = d.price_array(qs) - rotated.price_array(qs)
    if not np.all(np.diff(gap) < 0):
        raise ContractError("rotation must make the price difference strictly decreasing")
    return rotated
