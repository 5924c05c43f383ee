"""Shared fixtures: canonical environments and random mechanism generators."""

import numpy as np
import pytest

from regmech import (
    FixedCostEnv,
    LinearDemand,
    LogitDemand,
    MarketEnv,
    Mechanism,
)

# Canonical linear test market: P(q) = 1 - q, c = 0.02, types in [0.3, 0.5].
# Closed forms exist for every derived quantity (qfloor = sqrt(2c) = 0.2).
LIN = dict(c=0.02, theta_low=0.3, theta_high=0.5)


def linear_env(alpha=0.5, grid_n=2001):
    return MarketEnv.build(LinearDemand(1.0, 1.0), alpha=alpha, grid_n=grid_n, **LIN)


@pytest.fixture(scope="session")
def env():
    return linear_env()


@pytest.fixture(scope="session")
def env_a0():
    return linear_env(alpha=0.0)


@pytest.fixture(scope="session")
def env_small():
    return linear_env(alpha=0.5, grid_n=51)


@pytest.fixture(scope="session")
def logit_env():
    return MarketEnv.build(LogitDemand(1.0, 0.25), alpha=0.5, grid_n=2001, **LIN)


@pytest.fixture(scope="session")
def fc_env():
    return FixedCostEnv.build(LinearDemand(1.0, 1.0), c=0.4,
                              theta_low=0.05, theta_high=0.15, grid_n=501)


def random_ic_ir(env, rng, allow_rent=True, with_override=False):
    """Random IC and IR mechanism: decreasing product, arbitrary q/r split."""
    n = env.grid.n
    qbar = env.demand.qbar
    x = np.sort(rng.uniform(0.0, 0.8 * qbar, n))[::-1].copy()
    if rng.random() < 0.5:
        k = int(rng.integers(1, max(2, n // 3)))
        x[-k:] = 0.0
    lo = np.clip(x / qbar, 0.0, 1.0)
    r = np.where(x > 0.0, rng.uniform(0.0, 1.0, n) * (1.0 - lo) + lo, 0.0)
    q = np.where(x > 0.0, x / np.where(r > 0.0, r, 1.0), 0.0)
    u_bar = float(rng.uniform(0.0, 0.05)) if allow_rent and rng.random() < 0.5 else 0.0
    overrides = ()
    if with_override:
        i = int(rng.integers(1, n - 1))
        if x[i] - x[i + 1] > 1e-6:
            mid = 0.5 * (x[i] + x[i + 1])
            overrides = ((i, mid, 1.0),)
    return Mechanism(env, q, r, overrides, u_bar)


def random_floor_randomized(env, rng, strict_dd=False, deterministic=False):
    """Random floor-randomized mechanism, optionally with a strict distortion gap."""
    n = env.grid.n
    knots = env.grid.knots
    qe = env.demand.inverse_array(knots)
    qf = env.qfloor
    i1 = int(rng.integers(1, n + 1))            # knots [0, i1) operate fully
    i2 = i1 if deterministic else int(rng.integers(i1, n + 1))
    q = np.zeros(n)
    r = np.zeros(n)
    if strict_dd:
        room = qe - qf
        margins = np.sort(rng.uniform(0.0, 0.5, i1)) * room[:i1]
        margins[0] = 0.0
        margins[1:] = np.maximum(margins[1:], 1e-4 * room[1:i1])
        q[:i1] = np.minimum.accumulate(qe[:i1] - margins)
        q[:i1] = np.maximum(q[:i1], qf)
    else:
        q[:i1] = np.sort(rng.uniform(qf, 0.9 * env.demand.qbar, i1))[::-1]
    r[:i1] = 1.0
    q[i1:i2] = qf
    r[i1:i2] = np.sort(rng.uniform(0.05, 0.95, i2 - i1))[::-1]
    return Mechanism(env, q, r, (), 0.0)


def same_mechanism(a, b, tol=0.0):
    if tol == 0.0:
        arrays = np.array_equal(a.q_vals, b.q_vals) and np.array_equal(a.r_vals, b.r_vals)
    else:
        arrays = np.allclose(a.q_vals, b.q_vals, atol=tol) and \
            np.allclose(a.r_vals, b.r_vals, atol=tol)
    return arrays and a.overrides == b.overrides and a.u_bar == b.u_bar
