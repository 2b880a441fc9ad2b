import numpy as np
import pytest

from optswitch import GridSpec, SwitchingProblem
from optswitch import expr as ex


def make_problem(profits, costs, drift="0", sigma="1", horizon=1.0, x0=(0.5,),
                 state_dim=1, brownian_dim=1, neg_cost_bound=0, initial_mode=1):
    """Build a problem from expression strings.

    ``drift`` / ``sigma`` may be a single string (repeated) or nested
    sequences shaped (k,) and (k, d).
    """
    k, d, m = state_dim, brownian_dim, len(profits)
    if isinstance(drift, str):
        drift = [drift] * k
    if isinstance(sigma, str):
        sigma = [[sigma] * d for _ in range(k)]
    return SwitchingProblem(
        horizon=horizon, state_dim=k, brownian_dim=d, mode_count=m,
        drift=tuple(ex.parse(s, k) for s in drift),
        vol=tuple(tuple(ex.parse(s, k) for s in row) for row in sigma),
        profit=tuple(ex.parse(s, k) for s in profits),
        cost=tuple(tuple(ex.parse(costs[i][j], k) for j in range(m)) for i in range(m)),
        x0=x0, neg_cost_bound=neg_cost_bound, initial_mode=initial_mode)


@pytest.fixture
def small_grid():
    return GridSpec(time_steps=20, x_lo=0.0, x_hi=1.0, nodes=11)


@pytest.fixture
def tiny_grid():
    return GridSpec(time_steps=4, x_lo=0.0, x_hi=1.0, nodes=5)


def benchmark_problem():
    """The two-mode GBM instance the acceptance suite standardises on."""
    return make_problem(
        profits=["x1 - 4", "2 - 0.5 * x1"],
        costs=[["0", "0.3"], ["0.3", "0"]],
        drift="0.05 * x1", sigma="0.2 * x1", x0=(4.0,))


def benchmark_grid(refine: int = 1):
    """x0 = 4 sits exactly on a node at every power-of-two refinement."""
    base_nodes = 200
    return GridSpec(time_steps=200 * refine,
                    x_lo=0.625, x_hi=9.58,
                    nodes=(base_nodes - 1) * refine + 1)


def assert_close(a, b, tol, label=""):
    assert abs(a - b) <= tol, f"{label}: |{a} - {b}| = {abs(a - b)} > {tol}"
