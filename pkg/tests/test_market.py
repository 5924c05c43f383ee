"""Demand primitives, quantity floor, assumption validation, rotation."""

import math

import numpy as np
import pytest

import regmech as rm
from regmech.market import TabulatedDemand, TypeGrid

from conftest import LIN, linear_env


def scan_qfloor(demand, c, points=1_000_000):
    """Independent oracle: dense scan of V(q) - q P(q) with local interpolation."""
    qs = np.linspace(demand.qbar / points, demand.qbar * (1.0 - 1e-12), points)
    cs = demand.value_array(qs) - qs * demand.price_array(qs)
    k = int(np.searchsorted(cs, c))
    q0, q1, c0, c1 = qs[k - 1], qs[k], cs[k - 1], cs[k]
    return float(q0 + (c - c0) * (q1 - q0) / (c1 - c0))


class TestValue:
    def test_zero_quantity(self, env):
        assert rm.value(env, 0.0) == 0.0

    def test_closed_form(self, env):
        assert rm.value(env, 0.2) == pytest.approx(0.18, abs=1e-12)
        assert rm.value(env, 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_domain_error(self, env):
        with pytest.raises(rm.DomainError):
            rm.value(env, 1.5)
        with pytest.raises(rm.DomainError):
            rm.value(env, -0.1)


class TestPriceInverse:
    def test_linear_closed_forms(self, env):
        assert rm.price(env, 0.3) == pytest.approx(0.7, abs=1e-12)
        assert rm.inverse_price(env, 0.3) == pytest.approx(0.7, abs=1e-12)

    @pytest.mark.parametrize("family", ["linear", "logit", "tabulated"])
    def test_roundtrip(self, family, env, logit_env):
        if family == "linear":
            d = env.demand
        elif family == "logit":
            d = logit_env.demand
        else:
            d = TabulatedDemand((0.0, 0.25, 0.6, 1.0), (1.0, 0.7, 0.3, 0.0))
        rng = np.random.default_rng(7)
        for q in rng.uniform(1e-6, d.qbar * (1 - 1e-9), 50):
            assert d.inverse(d.price(q)) == pytest.approx(q, abs=1e-9)

    def test_out_of_range(self, env):
        with pytest.raises(rm.DomainError):
            rm.inverse_price(env, 1.5)


class TestQuantityFloor:
    def test_linear_closed_form(self, env):
        # unregulated consumer surplus is q^2 b / 2, so the floor is sqrt(2c/b)
        assert rm.quantity_floor(env) == pytest.approx(0.2, abs=1e-8)

    def test_degenerate_fixed_cost(self):
        tiny = rm.MarketEnv.build(rm.LinearDemand(1.0, 1.0), c=1e-12,
                                  theta_low=0.3, theta_high=0.5, alpha=0.5, grid_n=11)
        assert tiny.qfloor <= 1e-5

    def test_logit_against_scan_oracle(self, logit_env):
        got = rm.quantity_floor(logit_env)
        assert got == pytest.approx(scan_qfloor(logit_env.demand, logit_env.c), abs=1e-6)

    def test_linear_against_scan_oracle(self, env):
        assert rm.quantity_floor(env) == pytest.approx(
            scan_qfloor(env.demand, env.c), abs=1e-6)

    def test_unreachable_floor_rejected(self):
        # fixed cost above the maximal unregulated consumer surplus (= 0.5 here)
        with pytest.raises(rm.AssumptionError):
            rm.MarketEnv.build(rm.LinearDemand(1.0, 1.0), c=0.6,
                               theta_low=0.3, theta_high=0.5, alpha=0.5, grid_n=11)


class TestEfficientQuantity:
    def test_closed_form(self, env):
        assert rm.efficient_quantity(env, 0.3) == pytest.approx(0.7, abs=1e-12)
        assert rm.efficient_quantity(env, 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_above_floor_everywhere(self, env, logit_env):
        for e in (env, logit_env):
            qe = e.demand.inverse_array(e.grid.knots)
            assert np.all(qe > e.qfloor)

    def test_domain(self, env):
        with pytest.raises(rm.DomainError):
            rm.efficient_quantity(env, 0.25)


class TestValidateAssumptions:
    def test_linear_passes(self, env):
        report = rm.validate_assumptions(env)
        assert report.ok
        q_top = rm.efficient_quantity(env, 0.5)
        assert rm.total_surplus(env, 0.5, q_top) == pytest.approx(0.105, abs=1e-12)

    def test_a2_failure_rejected_at_construction(self):
        # V(0.5) - c - 0.5 * 0.5 = 0.375 - 0.2 - 0.25 < 0
        with pytest.raises(rm.AssumptionError):
            rm.MarketEnv.build(rm.LinearDemand(1.0, 1.0), c=0.2,
                               theta_low=0.3, theta_high=0.5, alpha=0.5, grid_n=11)

    def test_flat_tabulated_segment_reported(self):
        d = TabulatedDemand((0.0, 0.3, 0.6, 1.0), (1.0, 0.55, 0.55, 0.0))
        flat = rm.MarketEnv.build(d, c=0.02, theta_low=0.3, theta_high=0.5,
                                  alpha=0.5, grid_n=51)
        report = rm.validate_assumptions(flat)
        assert not report.ok
        assert any(c.name == "price-strictly-decreasing" for c in report.failures())

    def test_alpha_one_rejected(self):
        with pytest.raises(rm.DomainError):
            linear_env(alpha=1.0, grid_n=11)


class TestConcaveClosure:
    def test_branch_values(self, env):
        assert rm.concave_closure_value(env, 0.1) == pytest.approx(0.08, abs=1e-9)
        assert rm.concave_closure_value(env, 0.5) == pytest.approx(0.355, abs=1e-12)

    def test_continuous_at_floor(self, env):
        qf = env.qfloor
        below = qf * env.demand.price(qf)
        above = env.demand.value(qf) - env.c
        assert below == pytest.approx(above, abs=1e-9)
        assert rm.concave_closure_value(env, qf) == pytest.approx(0.16, abs=1e-8)

    def test_majorizes_net_value(self, env, logit_env):
        for e in (env, logit_env):
            qs = np.linspace(0.0, e.demand.qbar, 500)
            for q in qs:
                net = (e.demand.value(q) - e.c) if q > 0 else 0.0
                assert rm.concave_closure_value(e, q) >= net - 1e-12

    def test_midpoint_concavity(self, env, logit_env):
        rng = np.random.default_rng(11)
        for e in (env, logit_env):
            pairs = rng.uniform(0.0, e.demand.qbar, (300, 2))
            for x, y in pairs:
                mid = rm.concave_closure_value(e, 0.5 * (x + y))
                avg = 0.5 * (rm.concave_closure_value(e, x) + rm.concave_closure_value(e, y))
                assert mid >= avg - 1e-12


class TestRotate:
    def test_linear_pivot(self, env):
        rotated = rm.rotate(env, 0.5)
        assert rotated.a == pytest.approx(0.65, abs=1e-12)
        assert rotated.price(0.7) == pytest.approx(0.3, abs=1e-12)

    def test_floor_rises(self, env):
        rotated = rm.rotate(env, 0.5)
        env_n = rm.MarketEnv(env.theta_low, env.theta_high, env.c, env.alpha,
                             rotated, env.grid)
        assert env_n.qfloor == pytest.approx(math.sqrt(2 * env.c / 0.5), abs=1e-8)
        assert env_n.qfloor > env.qfloor

    def test_logit_rotation(self, logit_env):
        rotated = rm.rotate(logit_env, 0.1)
        assert rotated.price(logit_env.demand.inverse(0.3)) == pytest.approx(0.3, abs=1e-9)
        env_n = rm.MarketEnv(0.3, 0.5, logit_env.c, logit_env.alpha,
                             rotated, logit_env.grid)
        assert env_n.qfloor > logit_env.qfloor

    def test_identity_rotation_rejected(self, env):
        with pytest.raises(rm.ContractError):
            rm.rotate(env, 1.0)

    def test_tabulated_not_rotatable(self):
        d = TabulatedDemand((0.0, 0.5, 1.0), (1.0, 0.6, 0.0))
        e = rm.MarketEnv.build(d, c=0.02, theta_low=0.3, theta_high=0.5,
                               alpha=0.5, grid_n=11)
        with pytest.raises(rm.ContractError):
            rm.rotate(e, 0.5)


class TestGrid:
    def test_index_of(self, env):
        assert env.grid.index_of(0.3) == 0
        assert env.grid.index_of(0.5) == env.grid.n - 1
        with pytest.raises(rm.ContractError):
            env.grid.index_of(0.30005)

    def test_strictly_increasing(self):
        with pytest.raises(rm.DomainError):
            TypeGrid(np.array([0.3, 0.3, 0.5]))

    def test_trapezoid_weights_sum(self, env):
        assert float(np.sum(env.grid.trapezoid_weights)) == pytest.approx(0.2, abs=1e-12)
