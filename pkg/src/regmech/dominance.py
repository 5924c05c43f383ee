"""Dominance comparison and the classification of mechanisms.

A mechanism dominates another when the regulator's surplus is weakly
higher at every type and strictly higher at some type. Classification
runs the necessary conditions (floor randomization, downward distortion,
left continuity), certifies undomination from the sufficient conditions
(strict distortion), builds verified witnesses from the repair pipeline
when a necessary condition fails, and can scan the perturbation family
for witnesses inside the gap where neither side decides.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import islice

import numpy as np

from .errors import ContractError, InternalCheckError
from .market import MarketEnv
from .mechanism import (
    Mechanism,
    check_dd,
    check_left_continuity,
    check_strict_dd,
    partition_floor_randomized,
    require_ic_ir,
    rs_profile,
)
from .transforms import (
    dd_repair,
    efficient_perturbation,
    floor_transform,
    lc_repair,
    meet,
    perturbation_slope_bound,
    PerturbationParams,
)

_STRICT_TOL = 1e-12


class Relation(enum.Enum):
    DOMINATES = "dominates"
    DOMINATED_BY = "dominated_by"
    EQUAL = "equal"
    INCOMPARABLE = "incomparable"


@dataclass(frozen=True)
class DominanceVerdict:
    relation: Relation
    strict_knots: tuple
    min_gap: float
    max_gap: float


def compare(m: Mechanism, other: Mechanism, alpha: float | None = None) -> DominanceVerdict:
    """Knot-by-knot dominance verdict between two IC and IR mechanisms."""
    require_ic_ir(m, "first mechanism")
    require_ic_ir(other, "second mechanism")
    diff = rs_profile(m, alpha) - rs_profile(other, alpha)
    lo, hi = float(np.min(diff)), float(np.max(diff))
    above = tuple(int(i) for i in np.nonzero(diff > _STRICT_TOL)[0])
    below = tuple(int(i) for i in np.nonzero(diff < -_STRICT_TOL)[0])
    if not above and not below:
        return DominanceVerdict(Relation.EQUAL, (), lo, hi)
    if not below:
        return DominanceVerdict(Relation.DOMINATES, above, lo, hi)
    if not above:
        return DominanceVerdict(Relation.DOMINATED_BY, below, lo, hi)
    return DominanceVerdict(Relation.INCOMPARABLE, above + below, lo, hi)


class Status(enum.Enum):
    DOMINATED = "dominated"
    UNDOMINATED = "undominated"
    UNKNOWN = "unknown"


@dataclass(frozen=True, eq=False)
class Classification:
    status: Status
    witness: Mechanism | None
    certificate: dict
    diagnostics: dict
    witness_params: PerturbationParams | None = None


def _pipeline_witness(m: Mechanism) -> Mechanism:
    """Chain the repairs until all necessary conditions hold."""
    w = m
    if not partition_floor_randomized(w):
        w = floor_transform(w)
    if not check_dd(w):
        w = dd_repair(w)
    if not check_left_continuity(w):
        w = lc_repair(w)
    return w


def perturbation_candidates(env: MarketEnv, min_width_steps: int = 5, n_eps: int = 8):
    """Lexicographic stream of perturbation parameters for witness search.

    Interval endpoints run over grid knots at least ``min_width_steps``
    apart, slopes run over ``n_eps`` halvings of the admissible bound from
    the smallest up: gentle slopes first, since their band-edge grid
    artifact sits below the strictness tolerance. Intervals whose curvature
    is not single-signed are skipped.
    """
    knots = env.grid.knots
    n = knots.size
    for il in range(1, n - min_width_steps):
        for ih in range(il + min_width_steps, n):
            tl, th = float(knots[il]), float(knots[ih])
            try:
                bound = perturbation_slope_bound(env, tl, th)
            except ContractError:
                continue
            for k in range(n_eps, 0, -1):
                yield PerturbationParams(tl, th, bound / 2.0 ** k)


def _screen_candidate(env: MarketEnv, params: PerturbationParams,
                      target_rs: np.ndarray, alpha: float | None):
    """Cheap dominance screen of one perturbation candidate; no assertions."""
    knots = env.grid.knots
    qe = env.demand.inverse_array(knots)
    inside = (knots >= params.theta_l - 1e-15) & (knots <= params.theta_h + 1e-15)
    q = np.where(inside, qe - params.epsilon * (params.theta_h - knots), qe)
    cand = Mechanism(env, q, np.ones(knots.size), (), 0.0)
    diff = rs_profile(cand, alpha) - target_rs
    ok = float(np.min(diff)) >= -_STRICT_TOL and float(np.max(diff)) > _STRICT_TOL
    return ok


def search_efficient_witness(m: Mechanism, alpha: float | None = None,
                             max_candidates: int = 200_000, jobs: int = 1):
    """First perturbation-family witness dominating ``m``, in candidate order.

    Returns (mechanism, params) or (None, None). Candidate evaluation may run
    in parallel chunks; the first hit in lexicographic order always wins, so
    the result does not depend on ``jobs``.
    """
    env = m.env
    target = rs_profile(m, alpha)
    stream = islice(perturbation_candidates(env), max_candidates)

    def _found(params):
        witness = efficient_perturbation(env, params)
        verdict = compare(witness, m, alpha)
        if verdict.relation is Relation.DOMINATES:
            return witness, params
        return None

    if jobs <= 1:
        for params in stream:
            if _screen_candidate(env, params, target, alpha):
                hit = _found(params)
                if hit:
                    return hit
        return None, None

    chunk_size = 256
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        while True:
            chunk = list(islice(stream, chunk_size))
            if not chunk:
                return None, None
            flags = list(pool.map(
                lambda p: _screen_candidate(env, p, target, alpha), chunk))
            for params, flag in zip(chunk, flags):
                if flag:
                    hit = _found(params)
                    if hit:
                        return hit


def classify(m: Mechanism, witness_search: bool = False,
             max_candidates: int = 200_000, jobs: int = 1) -> Classification:
    """Classify a mechanism as dominated, undominated, or unresolved.

    A failed necessary condition yields a verified repair-pipeline witness.
    The sufficient conditions certify undomination. In the gap between them
    the honest verdict is unknown, unless ``witness_search`` finds a
    verified witness in the perturbation family.
    """
    require_ic_ir(m)
    part = partition_floor_randomized(m)
    dd = check_dd(m) if part else None
    lc = check_left_continuity(m)
    sdd = check_strict_dd(m)
    diagnostics = {
        "floor_randomized": bool(part),
        "partition_reason": part.reason,
        "downward_distortion": bool(dd) if dd is not None else bool(check_dd(m)),
        "left_continuous": bool(lc),
        "strict_downward_distortion": bool(sdd),
    }

    if part and diagnostics["downward_distortion"] and bool(lc) and bool(sdd):
        certificate = {"floor_randomized": True, "left_continuous": True, "strict_dd": True}
        return Classification(Status.UNDOMINATED, None, certificate, diagnostics)

    if not (part and diagnostics["downward_distortion"] and bool(lc)):
        witness = _pipeline_witness(m)
        verdict = compare(witness, m)
        if verdict.relation is not Relation.DOMINATES:
            raise InternalCheckError(
                f"repair pipeline produced a non-dominating witness ({verdict.relation})")
        return Classification(Status.DOMINATED, witness, {}, diagnostics)

    if witness_search:
        witness, params = search_efficient_witness(
            m, max_candidates=max_candidates, jobs=jobs)
        if witness is not None:
            return Classification(Status.DOMINATED, witness, {}, diagnostics, params)
    return Classification(Status.UNKNOWN, None, {}, diagnostics)


@dataclass(frozen=True, eq=False)
class NestingReport:
    """Verdicts showing that a dominance witness survives weaker profit weights."""

    witness_at_high: DominanceVerdict
    reduced_at_high: DominanceVerdict
    reduced_at_low: DominanceVerdict
    meet_used: bool
    ok: bool

    def __bool__(self) -> bool:
        return self.ok


def alpha_nesting_check(m: Mechanism, alpha_high: float, alpha_low: float,
                        witness: Mechanism) -> NestingReport:
    """Carry a dominance witness from a high profit weight to a lower one.

    Input must be floor randomized, distorted, and left continuous, with a
    witness that dominates it at ``alpha_high``. The witness is reduced so
    its product never exceeds the input's (taking the meet when needed);
    the reduced witness must still dominate at ``alpha_high`` and is then
    verified to dominate at ``alpha_low`` as well.
    """
    if not (0.0 < alpha_low < alpha_high < 1.0):
        raise ContractError("need 0 < alpha_low < alpha_high < 1")
    if witness is None:
        raise ContractError("nesting check needs a dominating witness")
    part = partition_floor_randomized(m)
    if not part or not check_dd(m) or not check_left_continuity(m):
        raise ContractError("nesting check needs a floor-randomized, distorted, "
                            "left-continuous input")
    v_high = compare(witness, m, alpha_high)
    if v_high.relation is not Relation.DOMINATES:
        raise ContractError(f"witness does not dominate at alpha={alpha_high}")

    product_leq = bool(np.all(
        witness.product_intervals() <= m.product_intervals() + _STRICT_TOL))
    reduced = witness if product_leq else meet(witness, m)
    v2 = compare(reduced, m, alpha_high)
    if v2.relation is not Relation.DOMINATES:
        raise InternalCheckError("reduced witness lost dominance at the high weight")
    v3 = compare(reduced, m, alpha_low)
    ok = v3.relation is Relation.DOMINATES
    if not ok:
        raise InternalCheckError("reduced witness failed to dominate at the low weight")
    return NestingReport(v_high, v2, v3, not product_leq, ok)
