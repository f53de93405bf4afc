import dataclasses

import numpy as np
import pytest

from avgctl.integrate import IntegratorConfig
from avgctl.lp import default_bases, default_z_grid, solve_dual_exchange
from avgctl.models import example2_problem
from avgctl.orbits import orbits_on_grid
from avgctl.perturbed import averaging_experiment, simulate_closed_loop, simulate_frozen
from avgctl.synthesis import FeedbackPolicy, integrate_averaged, tabulate_acg


@pytest.fixture(scope="session")
def ex2():
    return example2_problem()


@pytest.fixture(scope="session")
def ex2_grid(ex2):
    return default_z_grid(ex2, 20)


@pytest.fixture(scope="session")
def ex2_orbits(ex2, ex2_grid):
    return orbits_on_grid(ex2.model, ex2_grid)


@pytest.fixture(scope="session")
def ex2_dual(ex2, ex2_grid, ex2_orbits):
    bz, by = default_bases(ex2, ex2_grid, ex2_orbits)
    return solve_dual_exchange(ex2.model, ex2, bz, by, ex2_grid, orbits=ex2_orbits)


@pytest.fixture(scope="session")
def ex2_dual_fine(ex2):
    grid = default_z_grid(ex2, 40)
    orbits = orbits_on_grid(ex2.model, grid)
    bz, by = default_bases(ex2, grid, orbits)
    return solve_dual_exchange(ex2.model, ex2, bz, by, grid, control_grid=65, orbits=orbits)


@pytest.fixture(scope="session")
def ex2_policy(ex2, ex2_dual):
    return FeedbackPolicy(ex2_dual, ex2.model)


@pytest.fixture(scope="session")
def ex2_tables(ex2, ex2_policy, ex2_grid, ex2_orbits):
    return tabulate_acg(ex2.model, ex2_policy, ex2_grid, ex2_orbits)


@pytest.fixture(scope="session")
def ex2_averaged(ex2, ex2_tables):
    return integrate_averaged(ex2_tables, ex2.z0[0], ex2.discount)


@pytest.fixture(scope="session")
def ex2_closed_loop(ex2, ex2_policy, ex2_averaged):
    return simulate_closed_loop(ex2, ex2_policy, 80.0, cfg=IntegratorConfig(dt=0.01), averaged=ex2_averaged)


SWEEP_EPS = (0.2, 0.1, 0.05, 0.025)


@pytest.fixture(scope="session")
def ex2_sweep(ex2, ex2_policy, ex2_averaged):
    return averaging_experiment(ex2, ex2_policy, ex2_averaged, SWEEP_EPS, 40.0, cfg=IntegratorConfig(dt=0.01))


@pytest.fixture(scope="session")
def ex2_frozen(ex2, ex2_policy):
    """Frozen-schedule reports keyed by epsilon, each with its closed-loop cost."""
    out = {}
    for eps in (0.2, 0.1, 0.05):
        prob = dataclasses.replace(ex2, epsilon=eps)
        frozen = simulate_frozen(prob, ex2_policy, 80.0, cfg=IntegratorConfig(dt=0.01))
        closed = simulate_closed_loop(prob, ex2_policy, 80.0, cfg=IntegratorConfig(dt=0.01))
        out[eps] = (frozen, closed)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
