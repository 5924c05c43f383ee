"""Constructive mechanism transformations.

Each transformation takes an incentive-compatible, individually rational
mechanism and produces another one that weakly improves the regulator's
surplus at every type: the floor transformation and its mixture variant,
the downward-distortion repair, the left-continuity repair, the pointwise
meet, the extreme-point split of the operation rule, threshold extraction
of a deterministic mechanism, and the downward perturbation that improves
on the efficient mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InternalCheckError
from .market import TOL, MarketEnv
from .mechanism import (
    Mechanism,
    check_dd,
    check_left_continuity,
    envelope_rent,
    partition_floor_randomized,
    require_ic_ir,
    rs_profile,
)
from .optimize import Prior, expected_rs


def _floor_pair(x: float, qfloor: float) -> tuple:
    """Map a product level to the floor-randomized (q, r) pair delivering it."""
    if x <= 0.0:
        return 0.0, 0.0
    if x >= qfloor:
        return x, 1.0
    return qfloor, x / qfloor


def _floor_from_products(env: MarketEnv, x_int: np.ndarray, x_points: dict) -> Mechanism:
    qf = env.qfloor
    q = np.where(x_int >= qf, x_int, qf)
    q = np.where(x_int > 0.0, q, 0.0)
    r = np.where(x_int > 0.0, np.minimum(x_int / qf, 1.0), 0.0)
    overrides = []
    for i, xp in sorted(x_points.items()):
        oq, orr = _floor_pair(xp, qf)
        overrides.append((i, oq, orr))
    return Mechanism(env, q, r, tuple(overrides), 0.0)


def _assert_dominates(new: Mechanism, old_rs: np.ndarray, what: str,
                      alpha: float | None = None) -> np.ndarray:
    gain = rs_profile(new, alpha) - old_rs
    if float(np.min(gain)) < -1e-12:
        k = int(np.argmin(gain))
        raise InternalCheckError(
            f"{what} lowered the regulator surplus by {-gain[k]:.3g} at knot {k}")
    return gain


def floor_transform(m: Mechanism) -> Mechanism:
    """Floor-randomized transformation of an IC and IR mechanism.

    Keeps the product x = q r at every point: full operation at quantity x
    where x clears the floor, operation with probability x / qfloor at the
    floor quantity where it does not, shutdown where x = 0. The rent of the
    highest type is released to zero.
    """
    require_ic_ir(m)
    x_int = m.product_intervals()
    x_pts = {i: oq * orr for i, oq, orr in m.overrides}
    out = _floor_from_products(m.env, x_int, x_pts)

    x_new = out.product_points()
    x_old = m.product_points()
    # exact where one factor is untouched; one rounding op in the randomized band
    if not np.all(np.abs(x_new - x_old) <= np.spacing(np.maximum(np.abs(x_old), 1e-30))):
        raise InternalCheckError("floor transformation failed to preserve the product qr")
    if not partition_floor_randomized(out):
        raise InternalCheckError("floor transformation produced a non-floor-randomized mechanism")
    _assert_dominates(out, rs_profile(m), "floor transformation")
    return out


def floor_transform_mixture(mechanisms, weights) -> Mechanism:
    """Floor-randomized transformation of a mixture of IC and IR mechanisms.

    Applies the floor construction to the weighted average product and
    improves on the corresponding average of the regulator surpluses at
    every type.
    """
    mechs = list(mechanisms)
    gamma = np.asarray(weights, dtype=float)
    if not mechs or gamma.shape != (len(mechs),):
        raise ContractError("need one weight per mechanism")
    if np.any(gamma < 0.0) or abs(float(np.sum(gamma)) - 1.0) > 1e-12:
        raise ContractError("weights must be nonnegative and sum to one")
    env = mechs[0].env
    for mm in mechs:
        require_ic_ir(mm)
        if mm.env is not env and not np.array_equal(mm.env.grid.knots, env.grid.knots):
            raise ContractError("mixture components live on different grids")

    x_int = sum(g * mm.product_intervals() for g, mm in zip(gamma, mechs))
    idx = set()
    for mm in mechs:
        idx.update(i for i, _, _ in mm.overrides)
    x_pts = {}
    for i in sorted(idx):
        x_pts[i] = float(sum(g * mm.product_points()[i] for g, mm in zip(gamma, mechs)))
    out = _floor_from_products(env, np.asarray(x_int), x_pts)

    avg_rs = sum(g * rs_profile(mm) for g, mm in zip(gamma, mechs))
    if not partition_floor_randomized(out):
        raise InternalCheckError("mixture transformation lost the floor structure")
    _assert_dominates(out, np.asarray(avg_rs), "mixture floor transformation")
    return out


def dd_repair(m: Mechanism) -> Mechanism:
    """Cap quantities at the efficient rule and serve the lowest type efficiently.

    Input must be floor randomized. Quantities above the efficient level are
    clipped; the lowest type gets the efficient quantity with certain
    operation as a measure-zero knot override, leaving rents unaffected
    there. Rents weakly fall everywhere and the regulator gains strictly at
    every knot where the distortion bound was violated.
    """
    part = partition_floor_randomized(m)
    if not part:
        raise ContractError(f"distortion repair needs a floor-randomized input: {part.reason}")
    env = m.env
    qe = env.demand.inverse_array(env.grid.knots)
    was_violated = check_dd(m).witnesses

    q_new = np.where(m.q_vals > qe, qe, m.q_vals)
    overrides = []
    for i, oq, orr in m.overrides:
        if i == 0:
            continue
        overrides.append((i, min(oq, float(qe[i])), orr))
    base_ok = (abs(m.q_vals[0] - qe[0]) <= 1e-15 and abs(m.r_vals[0] - 1.0) <= 1e-15
               and not any(i == 0 for i, _, _ in m.overrides))
    if not base_ok:
        overrides.append((0, float(qe[0]), 1.0))
    out = Mechanism(env, q_new, m.r_vals, tuple(overrides), 0.0)

    if not partition_floor_randomized(out):
        raise InternalCheckError("distortion repair lost the floor structure")
    if not check_dd(out):
        raise InternalCheckError("distortion repair failed to enforce downward distortion")
    if np.any(envelope_rent(out) > envelope_rent(m) + 1e-12):
        raise InternalCheckError("distortion repair raised a rent")
    gain = _assert_dominates(out, rs_profile(m), "distortion repair")
    for k in was_violated:
        if gain[k] <= 0.0:
            raise InternalCheckError(f"no strict gain at violated knot {k}")
    return out


def lc_repair(m: Mechanism) -> Mechanism:
    """Lift override points whose product falls below its left limit.

    Input must be floor randomized and downward distorted. Every overridden
    knot above the lowest type whose product qr drops below the interval
    value is restored to the interval (left-limit) pair; rents are unchanged
    because the modified set has measure zero, and the regulator strictly
    gains at each repaired knot.
    """
    part = partition_floor_randomized(m)
    if not part:
        raise ContractError(f"continuity repair needs a floor-randomized input: {part.reason}")
    if not check_dd(m):
        raise ContractError("continuity repair needs downward distortion")
    x_int = m.product_intervals()
    kept, repaired = [], []
    for i, oq, orr in m.overrides:
        if i >= 1 and oq * orr < x_int[i] - TOL:
            repaired.append(i)
        else:
            kept.append((i, oq, orr))
    out = m.replace(overrides=tuple(kept))

    if np.any(np.abs(envelope_rent(out) - envelope_rent(m)) > 1e-12):
        raise InternalCheckError("continuity repair moved a rent")
    gain = _assert_dominates(out, rs_profile(m), "continuity repair")
    for k in repaired:
        if gain[k] <= 0.0:
            raise InternalCheckError(f"no strict gain at repaired knot {k}")
    if not check_left_continuity(out):
        raise InternalCheckError("continuity repair left a discontinuity")
    if not partition_floor_randomized(out) or not check_dd(out):
        raise InternalCheckError("continuity repair broke the floor structure")
    return out


def _require_regular(m: Mechanism, what: str) -> None:
    part = partition_floor_randomized(m)
    if not part:
        raise ContractError(f"{what} needs a floor-randomized input: {part.reason}")
    if not check_dd(m):
        raise ContractError(f"{what} needs downward distortion")
    if not check_left_continuity(m):
        raise ContractError(f"{what} needs a left-continuous input")


def meet(m: Mechanism, other: Mechanism) -> Mechanism:
    """Pointwise minimum of two floor-randomized, distorted, continuous mechanisms.

    Takes the knotwise minimum of the quantity and of the operation
    probability; for such a pair this also realizes the pointwise minimum of
    the products, and all three structural properties survive.
    """
    _require_regular(m, "meet")
    _require_regular(other, "meet")
    if not np.array_equal(m.env.grid.knots, other.env.grid.knots):
        raise ContractError("meet needs a common grid")

    q_min = np.minimum(m.q_vals, other.q_vals)
    r_min = np.minimum(m.r_vals, other.r_vals)
    pq = np.minimum(m.point_q(), other.point_q())
    pr = np.minimum(m.point_r(), other.point_r())
    overrides = []
    for i in sorted({i for i, _, _ in m.overrides} | {i for i, _, _ in other.overrides}):
        if pq[i] != q_min[i] or pr[i] != r_min[i]:
            overrides.append((i, float(pq[i]), float(pr[i])))
    out = Mechanism.build(m.env, q_min, r_min, tuple(overrides), 0.0)

    x_expect = np.minimum(m.product_points(), other.product_points())
    if np.any(np.abs(out.product_points() - x_expect) > TOL):
        raise InternalCheckError("meet failed to realize the product minimum")
    _require_regular(out, "meet output")
    return out


def extreme_split(m: Mechanism) -> tuple:
    """Split the operation rule into two extreme halves recombining exactly.

    Returns mechanisms with operation rules max(2r - 1, 0) and min(2r, 1);
    their average reproduces r exactly at every point, each is decreasing
    with values in [0, 1], and each keeps the floor structure (quantities
    are zeroed where a half stops operating).
    """
    part = partition_floor_randomized(m)
    if not part:
        raise ContractError(f"extreme split needs a floor-randomized input: {part.reason}")

    def _half(r_map):
        r_new = r_map(m.r_vals)
        q_new = np.where(r_new > 0.0, m.q_vals, 0.0)
        ov = []
        for i, oq, orr in m.overrides:
            rr = float(r_map(np.array([orr]))[0])
            ov.append((i, oq if rr > 0.0 else 0.0, rr))
        return Mechanism(m.env, q_new, r_new, tuple(ov), 0.0)

    low = _half(lambda r: np.maximum(2.0 * r - 1.0, 0.0))
    high = _half(lambda r: np.minimum(2.0 * r, 1.0))

    recombined = 0.5 * (low.point_r() + high.point_r())
    if not np.array_equal(recombined, m.point_r()):
        raise InternalCheckError("extreme halves do not average back to the operation rule")
    for half in (low, high):
        if not partition_floor_randomized(half):
            raise InternalCheckError("an extreme half lost the floor structure")
    return low, high


def deterministic_extract(m: Mechanism, prior: Prior, alpha: float | None = None) -> Mechanism:
    """Best deterministic threshold mechanism holding the quantity rule fixed.

    Scans operation cutoffs over the knots (operate every type up to the
    cutoff wherever the quantity is positive, shut the rest) and returns the
    expected-surplus maximizer. The objective is linear in the operation
    rule and every decreasing rule mixes such thresholds, so the best
    threshold weakly beats the input. Knot overrides carry no mass and are
    dropped.
    """
    part = partition_floor_randomized(m)
    if not part:
        raise ContractError(f"threshold extraction needs a floor-randomized input: {part.reason}")
    env = m.env
    a = env.alpha if alpha is None else alpha
    knots = env.grid.knots
    w = env.grid.trapezoid_weights
    g = prior.density
    deltas = np.concatenate([[0.0], env.grid.steps])
    mass_below = np.concatenate([[0.0], np.cumsum(w * g)[:-1]])

    q = m.q_vals
    ts = np.where(q > 0.0,
                  env.demand.value_array(q) - env.c - knots * q, 0.0)
    gain = w * g * ts - (1.0 - a) * q * deltas * mass_below
    totals = np.concatenate([[0.0], np.cumsum(gain)])  # totals[t+1] = value of cutoff t
    best = totals.size - 1 - int(np.argmax(totals[::-1]))  # ties favor wider operation

    keep = np.zeros(env.grid.n, dtype=bool)
    keep[:best] = True
    q_det = np.where(keep, q, 0.0)
    out = Mechanism.build(env, q_det, np.where(q_det > 0.0, 1.0, 0.0), u_bar=0.0)

    if expected_rs(out, prior, a) < expected_rs(m, prior, a) - 1e-12:
        raise InternalCheckError("threshold extraction lowered the expected surplus")
    return out


@dataclass(frozen=True)
class PerturbationParams:
    """Interval and slope of the quantity reduction applied to the efficient rule."""

    theta_l: float
    theta_h: float
    epsilon: float


def perturbation_slope_bound(env: MarketEnv, theta_l: float, theta_h: float) -> float:
    """Largest admissible reduction slope for the efficient-rule perturbation.

    Evaluates the local demand slope magnitude at the curvature-determined
    endpoint of the perturbed quantity range and returns (1 - alpha) / (2 g).
    """
    d = env.demand
    q_lo, q_hi = d.inverse(theta_h), d.inverse(theta_l)
    sign = d.curvature_sign(q_lo, q_hi)
    theta_star = theta_l if sign <= 0 else theta_h
    g = d.slope_magnitude(d.inverse(theta_star))
    return (1.0 - env.alpha) / (2.0 * g)


def efficient_perturbation(env: MarketEnv, params: PerturbationParams) -> Mechanism:
    """Dominating perturbation of the efficient mechanism.

    Reduces the efficient quantity by epsilon (theta_h - theta) on
    [theta_l, theta_h] and leaves it untouched elsewhere, with certain
    operation and no rent for the highest type. For a small enough slope
    the rent saving outweighs the surplus loss at every type in the
    perturbed band, strictly below theta_h, and exactly cancels above it.
    """
    tl, th, eps = params.theta_l, params.theta_h, params.epsilon
    if not (env.theta_low < tl < th <= env.theta_high):
        raise ContractError("perturbation interval must sit inside (theta_low, theta_high]")
    if eps <= 0.0:
        raise ContractError("perturbation slope must be positive")
    bound = perturbation_slope_bound(env, tl, th)
    if not eps < bound:
        raise ContractError(f"perturbation slope {eps} not below the admissible bound {bound:.9g}")

    knots = env.grid.knots
    inside = (knots >= tl - 1e-15) & (knots <= th + 1e-15)
    if not np.any(inside & (knots < th)):
        raise ContractError("perturbation interval contains no grid knot below theta_h")
    qe = env.demand.inverse_array(knots)
    q = np.where(inside, qe - eps * (th - knots), qe)
    if np.any(np.diff(q) > 1e-15):
        raise InternalCheckError("perturbed quantity rule is not decreasing")
    out = Mechanism(env, q, np.ones(env.grid.n), (), 0.0)

    base = Mechanism.efficient(env)
    d = env.demand
    sign = d.curvature_sign(d.inverse(th), d.inverse(tl))
    g_star = d.slope_magnitude(d.inverse(tl if sign <= 0 else th))
    step = float(np.max(env.grid.steps))
    gain = rs_profile(out) - rs_profile(base)

    # Analytic knot-level floor on the gain: the continuum lower bound
    # 0.5 eps (th - theta)^2 (1 - alpha - 2 eps g) minus the rent saving the
    # right-endpoint step integral undercounts, at most (1-alpha) eps step
    # per unit of distance to th. Near th the floor dips slightly negative;
    # that dip is a pure discretization artifact.
    dist = th - knots[inside]
    floor_gain = (0.5 * eps * dist ** 2 * (1.0 - env.alpha - 2.0 * eps * g_star)
                  - (1.0 - env.alpha) * eps * step * dist)
    if np.any(gain[inside] < floor_gain - 1e-12):
        raise InternalCheckError("perturbation gain fell below its analytic floor")
    if float(np.min(gain[~inside])) < -1e-12:
        raise InternalCheckError("perturbation lowered the surplus outside its band")
    solid = np.zeros_like(inside)
    solid[inside] = floor_gain > 1e-12
    if np.any(gain[solid] <= 0.0):
        raise InternalCheckError("no strict gain inside the perturbed band")
    return out
