"""Floor transformation, repairs, meet, splits, extraction, perturbation."""

import numpy as np
import pytest

import regmech as rm
from regmech.mechanism import rs_profile
from regmech.transforms import perturbation_slope_bound

from conftest import random_floor_randomized, random_ic_ir, same_mechanism

ALPHAS = (0.0, 0.5, 0.9)


def flat(env, q, r, **kw):
    n = env.grid.n
    return rm.Mechanism.build(env, np.full(n, q), np.full(n, r), **kw)


class TestFloorTransform:
    def test_sub_floor_product_randomizes(self, env_a0):
        m = flat(env_a0, 0.1, 1.0)
        t = rm.floor_transform(m)
        assert np.allclose(t.q_vals, 0.2, atol=1e-9)
        assert np.allclose(t.r_vals, 0.5, atol=1e-9)
        i = env_a0.grid.index_of(0.4)
        ts_in = m.point_r()[i] * rm.total_surplus(env_a0, 0.4, 0.1)
        ts_out = t.point_r()[i] * rm.total_surplus(env_a0, 0.4, t.point_q()[i])
        assert ts_in == pytest.approx(0.035, abs=1e-9)
        assert ts_out == pytest.approx(0.04, abs=1e-9)

    def test_fixed_point(self, env):
        rng = np.random.default_rng(2)
        m = random_floor_randomized(env, rng)
        t = rm.floor_transform(m)
        assert same_mechanism(t, m, tol=1e-15)

    def test_zero_mechanism(self, env):
        t = rm.floor_transform(rm.Mechanism.zero(env))
        assert np.all(t.q_vals == 0.0) and np.all(t.r_vals == 0.0)

    def test_product_preserved_bitwise_off_the_randomized_band(self, env):
        rng = np.random.default_rng(4)
        for _ in range(100):
            m = random_ic_ir(env, rng)
            t = rm.floor_transform(m)
            x_in, x_out = m.product_points(), t.product_points()
            hard = (x_in >= env.qfloor) | (x_in == 0.0)
            assert np.array_equal(x_in[hard], x_out[hard])
            band = ~hard
            assert np.all(np.abs(x_out[band] - x_in[band]) <= np.spacing(x_in[band]))

    def test_weakly_raises_surplus_at_every_knot(self, env):
        rng = np.random.default_rng(6)
        for _ in range(100):
            m = random_ic_ir(env, rng)
            t = rm.floor_transform(m)
            not_fr = not rm.partition_floor_randomized(m).ok
            for a in ALPHAS:
                gain = rs_profile(t, a) - rs_profile(m, a)
                assert float(np.min(gain)) >= -1e-12
                if not_fr:
                    assert float(np.max(gain)) > 1e-12

    def test_requires_ic(self, env_small):
        q = np.where(env_small.grid.knots < 0.4, 0.1, 0.2)
        m = rm.Mechanism.build(env_small, q, np.ones(env_small.grid.n))
        with pytest.raises(rm.ContractError):
            rm.floor_transform(m)


class TestFloorTransformMixture:
    def test_single_mechanism_degenerates(self, env):
        m = flat(env, 0.1, 1.0)
        t1 = rm.floor_transform_mixture([m], [1.0])
        t2 = rm.floor_transform(m)
        assert same_mechanism(t1, t2)

    def test_two_copies(self, env):
        m = flat(env, 0.1, 1.0)
        t = rm.floor_transform_mixture([m, m], [0.5, 0.5])
        assert same_mechanism(t, rm.floor_transform(m), tol=1e-15)

    def test_mixture_hits_the_floor_exactly(self, env):
        m1 = flat(env, 0.1, 1.0)
        m2 = flat(env, 0.3, 1.0)
        t = rm.floor_transform_mixture([m1, m2], [0.5, 0.5])
        assert np.allclose(t.q_vals, 0.2, atol=1e-12)
        assert np.allclose(t.r_vals, 1.0, atol=1e-12)
        for a in ALPHAS:
            avg = 0.5 * rs_profile(m1, a) + 0.5 * rs_profile(m2, a)
            assert float(np.min(rs_profile(t, a) - avg)) >= -1e-12

    def test_weight_validation(self, env):
        m = flat(env, 0.1, 1.0)
        with pytest.raises(rm.ContractError):
            rm.floor_transform_mixture([m, m], [0.6, 0.6])


class TestDdRepair:
    def test_floor_mechanism_gets_bottom_override(self, env):
        m = flat(env, 0.2, 1.0)
        fixed = rm.dd_repair(m)
        assert fixed.overrides == ((0, 0.7, 1.0),)
        gain = rs_profile(fixed) - rs_profile(m)
        # surplus gain at the bottom is TS(0.3, 0.7) - TS(0.3, 0.2)
        assert gain[0] == pytest.approx(0.225 - 0.10, abs=1e-9)
        assert np.allclose(gain[1:], 0.0, atol=1e-15)

    def test_already_distorted_is_fixed_point(self, env):
        m = rm.Mechanism.from_rules(env, lambda t: 1.3 - 2 * t)
        assert same_mechanism(rm.dd_repair(m), m)

    def test_clipping_above_efficient(self, env):
        qe = env.demand.inverse_array(env.grid.knots)
        q = np.maximum(qe, 0.6)
        m = rm.Mechanism.build(env, q, np.ones(env.grid.n))
        fixed = rm.dd_repair(m)
        clipped = env.grid.knots > 0.4
        assert np.allclose(fixed.q_vals[clipped], qe[clipped], atol=1e-15)
        u_gap = rm.envelope_rent(m) - rm.envelope_rent(fixed)
        assert np.all(u_gap[env.grid.knots <= 0.4] > 0.0)
        assert rm.check_dd(fixed).ok

    def test_contract(self, env):
        with pytest.raises(rm.ContractError):
            rm.dd_repair(flat(env, 0.1, 1.0))  # not floor randomized


class TestLcRepair:
    def _broken(self, env):
        i = env.grid.index_of(0.4)
        r = np.where(env.grid.knots <= 0.4, 1.0, 0.5)
        return i, rm.Mechanism.build(env, np.full(env.grid.n, 0.2), r,
                                     {0: (0.7, 1.0), i: (0.2, 0.5)})

    def test_repairs_product_drop(self, env):
        i, m = self._broken(env)
        fixed = rm.lc_repair(m)
        assert rm.check_left_continuity(fixed).ok
        gain = rs_profile(fixed) - rs_profile(m)
        # the repaired point regains (1 - 0.5) * TS(0.4, 0.2)
        assert gain[i] == pytest.approx(0.04, abs=1e-12)
        assert np.allclose(np.delete(gain, i), 0.0, atol=1e-15)

    def test_identity_without_overrides(self, env):
        m = rm.Mechanism.from_rules(env, lambda t: 1.3 - 2 * t)
        assert same_mechanism(rm.lc_repair(m), m)

    def test_two_repairs_leave_rents_alone(self, env):
        i, j = env.grid.index_of(0.38), env.grid.index_of(0.44)
        r = np.where(env.grid.knots <= 0.46, 1.0, 0.5)
        m = rm.Mechanism.build(env, np.full(env.grid.n, 0.2), r,
                               {0: (0.7, 1.0), i: (0.2, 0.8), j: (0.2, 0.9)})
        fixed = rm.lc_repair(m)
        assert rm.check_left_continuity(fixed).ok
        assert np.allclose(rm.envelope_rent(fixed), rm.envelope_rent(m), atol=1e-12)

    def test_contract_needs_dd(self, env):
        m = flat(env, 0.2, 1.0)  # floor randomized but not distorted at the bottom
        with pytest.raises(rm.ContractError):
            rm.lc_repair(m)


class TestMeet:
    def test_idempotent(self, env):
        m = rm.Mechanism.from_rules(env, lambda t: 1.3 - 2 * t)
        assert same_mechanism(rm.meet(m, m), m)

    def test_zero_absorbs(self, env):
        m = rm.Mechanism.from_rules(env, lambda t: 1.3 - 2 * t)
        z = rm.Mechanism.zero(env)
        out = rm.meet(m, z)
        assert np.all(out.q_vals == 0.0)

    def test_crossing_rules(self, env):
        m1 = rm.Mechanism.from_rules(env, lambda t: 1.3 - 2 * t)
        q2 = np.full(env.grid.n, 0.45)
        q2[0] = 0.7
        m2 = rm.Mechanism.build(env, q2, np.ones(env.grid.n))
        out = rm.meet(m1, m2)
        knots = env.grid.knots
        expect = np.minimum(1.3 - 2 * knots, 0.45)
        expect[0] = 0.7
        assert np.allclose(out.point_q(), expect, atol=1e-12)
        cross = knots[np.argmin(np.abs((1.3 - 2 * knots) - 0.45))]
        assert cross == pytest.approx(0.425, abs=1e-9)

    def test_product_minimum(self, env):
        rng = np.random.default_rng(8)
        for _ in range(15):
            a = random_floor_randomized(env, rng, strict_dd=True)
            b = random_floor_randomized(env, rng, strict_dd=True)
            out = rm.meet(a, b)
            assert np.allclose(out.product_points(),
                               np.minimum(a.product_points(), b.product_points()),
                               atol=1e-15)


class TestExtremeSplit:
    def test_half_probability(self, env):
        m = flat(env, 0.2, 0.5)
        lo, hi = rm.extreme_split(m)
        assert np.all(lo.r_vals == 0.0) and np.all(lo.q_vals == 0.0)
        assert np.all(hi.r_vals == 1.0)

    def test_binary_rules_unchanged(self, env):
        m = rm.Mechanism.from_rules(env, lambda t: 1.3 - 2 * t)
        lo, hi = rm.extreme_split(m)
        assert same_mechanism(lo, m) and same_mechanism(hi, m)

    def test_three_quarters(self, env):
        m = flat(env, 0.2, 0.75)
        lo, hi = rm.extreme_split(m)
        assert np.all(lo.r_vals == 0.5) and np.all(hi.r_vals == 1.0)

    def test_exact_recombination(self, env):
        rng = np.random.default_rng(10)
        for _ in range(25):
            m = random_floor_randomized(env, rng)
            lo, hi = rm.extreme_split(m)
            assert np.array_equal(0.5 * (lo.point_r() + hi.point_r()), m.point_r())


class TestDeterministicExtract:
    def test_uniform_floor_mechanism(self, env_a0):
        uni = rm.Prior.uniform(env_a0.grid)
        m = flat(env_a0, 0.2, 0.5)
        out = rm.deterministic_extract(m, uni)
        operating = int(np.sum(out.r_vals > 0.0))
        # the marginal value of operation stays positive on the whole range,
        # so every knot operates except possibly the half-weighted endpoint
        assert operating >= env_a0.grid.n - 1
        assert rm.expected_rs(out, uni) >= rm.expected_rs(m, uni) - 1e-12
        assert set(np.unique(out.r_vals)) <= {0.0, 1.0}

    def test_idempotent_on_own_output(self, env_a0):
        uni = rm.Prior.uniform(env_a0.grid)
        m = flat(env_a0, 0.2, 0.5)
        once = rm.deterministic_extract(m, uni)
        twice = rm.deterministic_extract(once, uni)
        assert same_mechanism(twice, once)

    def test_matches_threshold_enumeration(self):
        env = rm.MarketEnv.build(rm.LinearDemand(1.0, 1.0), c=0.02,
                                 theta_low=0.3, theta_high=0.5, alpha=0.5, grid_n=9)
        rng = np.random.default_rng(12)
        uni = rm.Prior.uniform(env.grid)
        levels = rm.make_quantity_levels(env, 5)
        for _ in range(25):
            m = random_floor_randomized(env, rng)
            best = -np.inf
            for cut in range(env.grid.n + 1):
                keep = np.arange(env.grid.n) < cut
                q = np.where(keep, m.q_vals, 0.0)
                cand = rm.Mechanism.build(env, q, np.where(q > 0, 1.0, 0.0))
                best = max(best, rm.expected_rs(cand, uni))
            got = rm.expected_rs(rm.deterministic_extract(m, uni), uni)
            assert got == pytest.approx(best, abs=1e-12)

    def test_never_lowers_expected_surplus(self, env):
        rng = np.random.default_rng(14)
        uni = rm.Prior.uniform(env.grid)
        for _ in range(50):
            m = random_floor_randomized(env, rng)
            out = rm.deterministic_extract(m, uni)
            assert rm.expected_rs(out, uni) >= rm.expected_rs(m, uni) - 1e-12


class TestEfficientPerturbation:
    def test_reference_instance(self, env):
        base = rm.Mechanism.efficient(env)
        w = rm.efficient_perturbation(env, rm.PerturbationParams(0.35, 0.45, 0.1))
        gap = rs_profile(w) - rs_profile(base)
        i35 = env.grid.index_of(0.35)
        i45 = env.grid.index_of(0.45)
        # closed-form floor: 0.5 * eps * (th - theta)^2 * (1 - alpha - 2 eps g)
        assert gap[i35] >= 1.5e-4 - env.demand.qbar * 1e-4
        assert np.max(np.abs(gap[i45:])) <= 1e-10

    def test_slope_bound(self, env):
        assert perturbation_slope_bound(env, 0.35, 0.45) == pytest.approx(0.25, abs=1e-12)
        with pytest.raises(rm.ContractError):
            rm.efficient_perturbation(env, rm.PerturbationParams(0.35, 0.45, 0.3))

    def test_vanishing_slope_recovers_the_efficient_rule(self, env):
        w = rm.efficient_perturbation(env, rm.PerturbationParams(0.35, 0.45, 1e-9))
        qe = env.demand.inverse_array(env.grid.knots)
        assert np.max(np.abs(w.q_vals - qe)) <= 1e-9 * 0.2

    def test_logit_curvature_guard(self, logit_env):
        # the efficient range spans quantities above 1/2 only: concave branch
        w = rm.efficient_perturbation(logit_env, rm.PerturbationParams(0.35, 0.45, 1e-3))
        assert rm.check_dd(w).ok

    def test_interval_validation(self, env):
        with pytest.raises(rm.ContractError):
            rm.efficient_perturbation(env, rm.PerturbationParams(0.3, 0.45, 0.1))
        with pytest.raises(rm.ContractError):
            rm.efficient_perturbation(env, rm.PerturbationParams(0.45, 0.35, 0.1))


class TestRepairPipeline:
    def test_full_pipeline_dominates(self, env):
        rng = np.random.default_rng(16)
        for _ in range(40):
            m = random_ic_ir(env, rng, with_override=bool(rng.random() < 0.4))
            w = rm.floor_transform(m)
            if not rm.check_dd(w).ok:
                w = rm.dd_repair(w)
            if not rm.check_left_continuity(w).ok:
                w = rm.lc_repair(w)
            assert rm.partition_floor_randomized(w).ok
            assert rm.check_dd(w).ok
            assert rm.check_left_continuity(w).ok
            gain = rs_profile(w) - rs_profile(m)
            assert float(np.min(gain)) >= -1e-12
