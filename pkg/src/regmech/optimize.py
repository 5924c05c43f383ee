"""Priors, expected regulator surplus, and prior-based optimal mechanisms.

Covers first-order stochastic dominance on grid priors, the virtual-cost
construction of the optimal deterministic mechanism (with ironing and
shutdown), an independent dynamic-programming oracle over decreasing
quantity sequences, max-min optimization over finite prior sets, the
monotonicity check for floor-randomized mechanisms, and a desk-scale
search for a prior that rationalizes a given mechanism as optimal.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy.optimize import linprog

from .errors import ContractError, InternalCheckError
from .market import TOL, MarketEnv, TypeGrid, total_surplus_array
from .mechanism import (
    Mechanism,
    check_dd,
    envelope_rent,
    partition_floor_randomized,
    require_ic_ir,
    rs_profile,
)


@dataclass(frozen=True, eq=False)
class Prior:
    """A probability density over marginal costs, sampled on the grid.

    The density integrates to one under the trapezoid rule; the cumulative
    values are the trapezoid accumulation starting at zero.
    """

    grid: TypeGrid
    density: np.ndarray
    cdf: np.ndarray
    name: str = ""

    @classmethod
    def from_density(cls, grid: TypeGrid, values, name: str = "") -> "Prior":
        g = np.asarray(values, dtype=float).copy()
        if g.shape != (grid.n,):
            raise ContractError(f"density must have grid length {grid.n}")
        if np.any(g < 0.0):
            raise ContractError("density values must be nonnegative")
        steps = grid.steps
        raw = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * steps)])
        total = raw[-1]
        if total <= 0.0:
            raise ContractError("density must have positive mass")
        g /= total
        cdf = raw / total
        g.setflags(write=False)
        cdf.setflags(write=False)
        return cls(grid, g, cdf, name)

    @classmethod
    def uniform(cls, grid: TypeGrid) -> "Prior":
        return cls.from_density(grid, np.ones(grid.n), "uniform")

    @classmethod
    def triangular(cls, grid: TypeGrid, peak: str = "high") -> "Prior":
        k = grid.knots
        if peak == "high":
            vals = k - k[0]
        elif peak == "low":
            vals = k[-1] - k
        else:
            raise ContractError("triangular peak must be 'high' or 'low'")
        return cls.from_density(grid, vals, f"triangular-{peak}")

    @classmethod
    def near_point_mass(cls, grid: TypeGrid, at: float, half_width: float | None = None) -> "Prior":
        """Narrow triangular spike standing in for a point mass at ``at``."""
        k = grid.knots
        if half_width is None:
            half_width = 2.0 * float(np.max(grid.steps))
        vals = np.maximum(0.0, 1.0 - np.abs(k - at) / half_width)
        return cls.from_density(grid, vals, f"spike@{at:g}")

    def same_grid(self, other: "Prior") -> bool:
        return self.grid.n == other.grid.n and bool(
            np.all(np.abs(self.grid.knots - other.grid.knots) <= 1e-12))


def fosd(a: Prior, b: Prior) -> bool:
    """True when ``a`` first-order stochastically dominates ``b`` weakly.

    Dominance means a's cumulative distribution never exceeds b's, i.e.
    ``a`` shifts mass toward higher marginal costs.
    """
    if not a.same_grid(b):
        raise ContractError("priors live on different grids")
    return bool(np.all(a.cdf <= b.cdf + 1e-12))


def expected_rs(m: Mechanism, prior: Prior, alpha: float | None = None) -> float:
    """Trapezoid integral of the regulator surplus against the prior density.

    Knot overrides carry measure zero and are excluded.
    """
    require_ic_ir(m)
    if not bool(np.all(np.abs(prior.grid.knots - m.env.grid.knots) <= 1e-12)):
        raise ContractError("prior and mechanism live on different grids")
    rs = rs_profile(m, alpha, use_overrides=False)
    w = m.env.grid.trapezoid_weights
    return float(np.sum(w * prior.density * rs))


# ---------------------------------------------------------------------------
# Optimal mechanisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OptimalResult:
    mechanism: Mechanism
    expected: float
    virtual_cost: np.ndarray
    ironed: bool


def virtual_cost(env: MarketEnv, prior: Prior, alpha: float | None = None) -> np.ndarray:
    """Effective marginal cost theta + (1 - alpha) G(theta) / g(theta).

    A zero density is tolerated only at the boundary, where the ratio has a
    well-defined limit: zero while no mass lies below, infinite once all
    mass does. A zero density at an interior knot is rejected.
    """
    a = env.alpha if alpha is None else alpha
    g, cdf = prior.density, prior.cdf
    tiny = g <= 1e-15
    leading = tiny & (cdf <= 1e-12)
    trailing = tiny & (cdf >= 1.0 - 1e-12)
    if np.any(tiny & ~leading & ~trailing):
        raise ContractError("virtual costs need a positive density at interior knots")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = cdf / g
    ratio = np.where(leading, 0.0, np.where(trailing, np.inf, ratio))
    return env.grid.knots + (1.0 - a) * ratio


def isotonic_decreasing(y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Least-squares projection onto nonincreasing sequences (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    # project -y onto nondecreasing sequences
    vals = list(-y)
    wts = list(w)
    counts = [1] * len(vals)
    merged_vals, merged_wts, merged_counts = [], [], []
    for v, ww, cc in zip(vals, wts, counts):
        merged_vals.append(v)
        merged_wts.append(ww)
        merged_counts.append(cc)
        while len(merged_vals) > 1 and merged_vals[-2] > merged_vals[-1]:
            v2, w2, c2 = merged_vals.pop(), merged_wts.pop(), merged_counts.pop()
            v1, w1, c1 = merged_vals.pop(), merged_wts.pop(), merged_counts.pop()
            wtot = w1 + w2
            merged_vals.append((v1 * w1 + v2 * w2) / wtot)
            merged_wts.append(wtot)
            merged_counts.append(c1 + c2)
    out = np.empty_like(y)
    pos = 0
    for v, cc in zip(merged_vals, merged_counts):
        out[pos:pos + cc] = -v
        pos += cc
    return out


def bm_optimal(env: MarketEnv, prior: Prior, alpha: float | None = None) -> OptimalResult:
    """Deterministic optimal mechanism for a full-support prior.

    Inverts the demand at the virtual cost, irons the pointwise maximizer
    if the virtual cost is non-monotone, enforces the quantity floor on
    operating types, and shuts down types whose floor-respecting virtual
    value turns negative (ties operate). The construction is validated
    against the dynamic-programming oracle in the test suite rather than
    trusted on its own.
    """
    a = env.alpha if alpha is None else alpha
    psi = virtual_cost(env, prior, a)
    d = env.demand
    p0 = d.price(0.0)
    psi_clipped = np.clip(psi, 0.0, p0)
    q_star = np.clip(d.inverse_array(psi_clipped), 0.0, d.qbar)
    q_star = np.where(psi >= p0, 0.0, q_star)

    ironed = bool(np.any(np.diff(psi) < -1e-12))
    q_mono = isotonic_decreasing(q_star) if ironed else q_star

    qe = d.inverse_array(env.grid.knots)
    q_cand = np.minimum(q_mono, qe)
    q_op = np.maximum(q_cand, env.qfloor)
    value_at = d.value_array(q_op) - env.c - psi * q_op
    operating = value_at >= 0.0
    # shutdown must be an upper interval to keep the quantity sequence decreasing
    stop = int(np.argmin(operating)) if not bool(np.all(operating)) else env.grid.n
    q_final = np.where(np.arange(env.grid.n) < stop, q_op, 0.0)
    r_final = np.where(q_final > 0.0, 1.0, 0.0)

    mech = Mechanism.build(env, q_final, r_final, u_bar=0.0)
    if not partition_floor_randomized(mech):
        raise InternalCheckError("optimal construction failed the floor structure")
    if not check_dd(mech):
        raise InternalCheckError("optimal construction violated downward distortion")
    return OptimalResult(mech, expected_rs(mech, prior, a), psi, ironed)


def make_quantity_levels(env: MarketEnv, k: int) -> np.ndarray:
    """Zero plus a k-1 point refinement of [qfloor, q_e(theta_low)]."""
    if k < 2:
        raise ContractError("need at least two quantity levels")
    top = env.demand.inverse(env.theta_low)
    return np.concatenate([[0.0], np.linspace(env.qfloor, top, k - 1)])


def dp_oracle(env: MarketEnv, prior: Prior, q_levels, alpha: float | None = None) -> OptimalResult:
    """Exact optimum over deterministic mechanisms on a quantity-level grid.

    Dynamic program over (knot, level) states for decreasing quantity
    sequences. The objective is the step-consistent quadrature of the
    expected regulator surplus: the surplus of interval i is evaluated at
    its right knot and weighted by the prior mass of the interval, and the
    rent a level generates for lower types is exact (it couples only to the
    prior mass below the interval), so per-knot gains separate. The
    reported expectation is re-evaluated with the public trapezoid rule.
    """
    a = env.alpha if alpha is None else alpha
    levels = make_quantity_levels(env, q_levels) if isinstance(q_levels, (int, np.integer)) \
        else np.asarray(q_levels, dtype=float)
    levels = np.unique(levels)
    if levels[0] != 0.0:
        raise ContractError("quantity levels must include 0")
    if levels[-1] > env.demand.qbar + TOL:
        raise ContractError("quantity levels must stay within [0, qbar]")

    knots = env.grid.knots
    n, k = knots.size, levels.size
    interval_mass = np.concatenate([[0.0], np.diff(prior.cdf)])
    mass_below = np.concatenate([[0.0], prior.cdf[:-1]])
    deltas = np.concatenate([[0.0], env.grid.steps])

    ts = total_surplus_array(env, knots[:, None], np.broadcast_to(levels, (n, k)))
    gain = interval_mass[:, None] * ts \
        - (1.0 - a) * (deltas * mass_below)[:, None] * levels[None, :]

    dp = gain[0].copy()
    parents = np.zeros((n, k), dtype=np.intp)
    for i in range(1, n):
        best = np.empty(k)
        arg = np.empty(k, dtype=np.intp)
        running, running_arg = -np.inf, k - 1
        for kk in range(k - 1, -1, -1):
            if dp[kk] > running:
                running, running_arg = dp[kk], kk
            best[kk], arg[kk] = running, running_arg
        parents[i] = arg
        dp = gain[i] + best

    k_star = int(k - 1 - np.argmax(dp[::-1]))
    choice = np.empty(n, dtype=np.intp)
    choice[-1] = k_star
    for i in range(n - 1, 0, -1):
        choice[i - 1] = parents[i][choice[i]]
    q = levels[choice]
    mech = Mechanism.build(env, q, np.where(q > 0.0, 1.0, 0.0), u_bar=0.0)

    value = float(np.max(dp))
    along_path = float(np.sum(gain[np.arange(n), choice]))
    if abs(value - along_path) > 1e-9:
        raise InternalCheckError(
            f"dynamic program value {value} disagrees with its own path sum {along_path}")
    return OptimalResult(mech, expected_rs(mech, prior, a), virtual_cost(env, prior, a), False)


@dataclass(frozen=True, eq=False)
class MaxminResult:
    optimal: OptimalResult
    star_index: int
    expected_by_prior: tuple


def maxmin(env: MarketEnv, priors, alpha: float | None = None) -> MaxminResult:
    """Max-min optimal mechanism for a finite prior set with a dominant element.

    Finds the prior that stochastically dominates every other (mass shifted
    to the highest costs), solves for its optimal mechanism, and verifies by
    direct evaluation that this prior attains the worst case for it.
    """
    priors = list(priors)
    if not priors:
        raise ContractError("prior set is empty")
    star = None
    for i, cand in enumerate(priors):
        if all(fosd(cand, other) for other in priors):
            star = i
            break
    if star is None:
        raise ContractError("no dominating prior: the set has no worst-case element")
    result = bm_optimal(env, priors[star], alpha)
    values = tuple(expected_rs(result.mechanism, p, alpha) for p in priors)
    if not all(values[star] <= v + 1e-9 for v in values):
        raise InternalCheckError("worst case not attained at the dominating prior")
    return MaxminResult(result, star, values)


# ---------------------------------------------------------------------------
# Monotonicity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonotoneReport:
    ok: bool
    worst_pair: tuple | None
    worst_gap: float
    prior_checks: tuple

    def __bool__(self) -> bool:
        return self.ok


def monotone_rs_check(m: Mechanism, prior_pairs=(), alpha: float | None = None) -> MonotoneReport:
    """Regulator surplus decreases in the type for floor-randomized DD mechanisms.

    Checks RS(theta_i) >= RS(theta_j) - 1e-12 for every knot pair i < j, and
    for each supplied (better, worse) prior pair with the worse one shifting
    mass to higher costs, that the expected surplus is higher under the
    better prior.
    """
    if not partition_floor_randomized(m):
        raise ContractError("monotonicity holds only for floor-randomized mechanisms")
    if not check_dd(m):
        raise ContractError("monotonicity needs downward distortion")
    rs = rs_profile(m, alpha)
    run_min = np.minimum.accumulate(rs)
    gaps = rs[1:] - run_min[:-1]
    worst = int(np.argmax(gaps))
    ok = bool(gaps[worst] <= 1e-12)
    worst_pair = (int(np.argmin(rs[:worst + 1])), worst + 1) if not ok else None

    prior_checks = []
    for better, worse in prior_pairs:
        if not fosd(worse, better):
            raise ContractError("each prior pair must be (better, worse) in the dominance order")
        lhs = expected_rs(m, better, alpha)
        rhs = expected_rs(m, worse, alpha)
        prior_checks.append((lhs, rhs, bool(lhs >= rhs - 1e-12)))
        ok = ok and prior_checks[-1][2]
    return MonotoneReport(ok, worst_pair, float(gaps[worst]), tuple(prior_checks))


# ---------------------------------------------------------------------------
# Rationalizing priors at desk scale
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RationalizingResult:
    feasible: bool
    density: np.ndarray | None
    candidates: int


def enumerate_decreasing_profiles(n: int, levels: np.ndarray) -> np.ndarray:
    """All nonincreasing quantity sequences of length n over the level set."""
    k = levels.size
    rows = []
    for combo in combinations_with_replacement(range(k), n):
        rows.append([levels[j] for j in sorted(combo, reverse=True)])
    return np.asarray(rows, dtype=float)


def find_rationalizing_prior(env: MarketEnv, m: Mechanism, q_levels,
                             alpha: float | None = None) -> RationalizingResult:
    """Search for a grid density making ``m`` optimal among enumerated rivals.

    Enumerates every deterministic decreasing mechanism on the quantity-level
    grid and solves the linear feasibility problem: a nonnegative density
    with unit trapezoid mass whose expected surplus under ``m`` weakly
    exceeds that of every rival. Certification is relative to the enumerated
    set only, which is the honest desk-scale reading.
    """
    a = env.alpha if alpha is None else alpha
    levels = make_quantity_levels(env, q_levels) if isinstance(q_levels, (int, np.integer)) \
        else np.asarray(q_levels, dtype=float)
    levels = np.unique(levels)
    n = env.grid.n
    if n > 8 or levels.size > 5:
        raise ContractError("rationalizing-prior search is limited to n <= 8 knots, 5 levels")
    require_ic_ir(m)
    r = m.point_r()
    if np.any((r > TOL) & (r < 1.0 - TOL)):
        raise ContractError("rationalizing-prior search expects a deterministic mechanism")

    knots = env.grid.knots
    deltas = np.concatenate([[0.0], env.grid.steps])
    profiles = enumerate_decreasing_profiles(n, levels)
    ts = total_surplus_array(env, knots[None, :], profiles)
    seg = profiles * deltas[None, :]
    u = np.concatenate([np.cumsum(seg[:, ::-1], axis=1)[:, ::-1][:, 1:],
                        np.zeros((profiles.shape[0], 1))], axis=1)
    rs_rivals = ts - (1.0 - a) * u

    rs_m = rs_profile(m, a, use_overrides=False)
    w = env.grid.trapezoid_weights
    diff = (rs_m[None, :] - rs_rivals) * w[None, :]

    res = linprog(
        c=np.zeros(n),
        A_ub=-diff,
        b_ub=np.zeros(diff.shape[0]),
        A_eq=w[None, :],
        b_eq=[1.0],
        bounds=[(0.0, None)] * n,
        method="highs",
    )
    if res.status == 0:
        return RationalizingResult(True, np.asarray(res.x), profiles.shape[0])
    if res.status == 2:
        return RationalizingResult(False, None, profiles.shape[0])
    raise InternalCheckError(f"feasibility solve ended with status {res.status}: {res.message}")
