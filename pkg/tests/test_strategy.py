import numpy as np
import pytest

from optswitch import (GridSpec, SwitchingPolicy, ThresholdRule, ThresholdStrategy,
                       TimedStrategy, build_chain, evaluate_fixed_strategy,
                       extract_policy, fingerprint, random_threshold_strategies,
                       simulate, solve_fixed_point)

from conftest import make_problem


def _solved(p, grid):
    chain = build_chain(p, grid)
    field, _ = solve_fixed_point(chain, p)
    return field


# ---------------------------------------------------------------------------
# Extraction


def test_policy_continue_everywhere_when_costs_dominate(small_grid):
    p = make_problem(["1", "2"], [["0", "10"], ["10", "0"]])
    pol = extract_policy(_solved(p, small_grid), p, tol=1e-9)
    assert np.all(pol.decisions == 0)


def test_negative_cost_policy_switches_at_start(small_grid):
    p = make_problem(["0", "0"], [["0", "-(0.5 * (1 - t))"], ["2", "0"]],
                     neg_cost_bound=1)
    pol = extract_policy(_solved(p, small_grid), p, tol=1e-9)
    assert np.all(pol.decisions[0, 0, :] == 2)   # mode 1 at t=0: switch everywhere
    assert np.all(pol.decisions[1] == 0)         # mode 2 never switches back
    assert np.all(pol.decisions[:, -1, :] == 0)  # no decisions at the horizon


def test_symmetric_policy_under_mode_swap(small_grid):
    p = make_problem(["x1", "x1"], [["0", "0.5"], ["0.5", "0"]])
    pol = extract_policy(_solved(p, small_grid), p, tol=1e-9)
    assert np.all(pol.decisions == 0)  # positive costs, equal values: never switch


def test_policy_rejects_foreign_problem(small_grid):
    p = make_problem(["1", "2"], [["0", "10"], ["10", "0"]])
    other = make_problem(["1", "3"], [["0", "10"], ["10", "0"]])
    field = _solved(p, small_grid)
    with pytest.raises(ValueError):
        extract_policy(field, other)


def test_policy_invariant_switch_sits_on_obstacle(small_grid):
    from optswitch.problem import tabulate_costs

    p = make_problem(["x1", "1 - x1"], [["0", "0.05"], ["0.05", "0"]])
    field = _solved(p, small_grid)
    tol = 1e-9
    pol = extract_policy(field, p, tol=tol)
    cost = tabulate_costs(p, small_grid)
    dec = pol.decisions
    for n in range(small_grid.time_steps):
        for i in range(2):
            hits = np.nonzero(dec[i, n])[0]
            for q in hits:
                j = dec[i, n, q]
                lhs = field.values[i, n, q]
                rhs = -cost[i, j - 1, n, q] + field.values[j - 1, n, q]
                assert lhs <= rhs + tol + 1e-12


# ---------------------------------------------------------------------------
# Simulation


def test_continue_everywhere_constant_profit_deterministic(small_grid):
    p = make_problem(["2"], [["0"]])
    pol = extract_policy(_solved(p, small_grid), p)
    stats = simulate(p, pol, path_count=500, seed=9)
    assert stats.std_err == 0.0
    assert abs(stats.mean_j - 2.0) <= 1e-12
    assert stats.switch_histogram == {0: 500}


def test_bitwise_reproducibility(small_grid):
    p = make_problem(["x1", "1 - x1"], [["0", "0.05"], ["0.05", "0"]])
    pol = extract_policy(_solved(p, small_grid), p)
    s1 = simulate(p, pol, path_count=400, seed=1234, substeps=2)
    s2 = simulate(p, pol, path_count=400, seed=1234, substeps=2)
    assert np.array_equal(s1.j_values, s2.j_values)
    assert s1.render() == s2.render()


def test_chunking_does_not_change_draws(small_grid, monkeypatch):
    import optswitch.strategy as strat

    p = make_problem(["x1", "1 - x1"], [["0", "0.05"], ["0.05", "0"]])
    pol = extract_policy(_solved(p, small_grid), p)
    big = simulate(p, pol, path_count=300, seed=77)
    monkeypatch.setattr(strat, "_CHUNK", 64)
    small = simulate(p, pol, path_count=300, seed=77)
    assert np.array_equal(big.j_values, small.j_values)


def test_bookkeeping_identity(small_grid):
    p = make_problem(["x1", "1 - x1"], [["0", "0.05"], ["0.05", "0"]])
    pol = extract_policy(_solved(p, small_grid), p)
    stats = simulate(p, pol, path_count=300, seed=5)
    assert np.max(np.abs(stats.j_values - (stats.profit_integrals - stats.cost_totals))) <= 1e-12


def test_path_records_match_kernel(small_grid):
    p = make_problem(["x1", "1 - x1"], [["0", "0.05"], ["0.05", "0"]])
    pol = extract_policy(_solved(p, small_grid), p)
    stats = simulate(p, pol, path_count=64, seed=21, record_paths=8)
    assert len(stats.records) == 8
    for idx, rec in enumerate(stats.records):
        assert rec.j_value == pytest.approx(stats.j_values[idx], abs=1e-12)
        assert rec.profit_integral == pytest.approx(stats.profit_integrals[idx], abs=1e-12)
        assert rec.cost_total == pytest.approx(stats.cost_totals[idx], abs=1e-12)
        assert len(rec.switches) == stats.switch_counts[idx]
        assert rec.j_value == rec.profit_integral - rec.cost_total


def test_negative_cost_simulation_switches_once(small_grid):
    p = make_problem(["0", "0"], [["0", "-(0.5 * (1 - t))"], ["2", "0"]],
                     neg_cost_bound=1)
    pol = extract_policy(_solved(p, small_grid), p)
    stats = simulate(p, pol, path_count=200, seed=3, record_paths=3)
    assert stats.switch_histogram == {1: 200}
    assert stats.std_err == 0.0
    assert abs(stats.mean_j - 0.5) <= 1e-12
    assert stats.negative_cost_switch_histogram == {1: 200}
    for rec in stats.records:
        assert len(rec.switches) == 1
        t, frm, to, paid = rec.switches[0]
        assert (t, frm, to) == (0.0, 1, 2)
        assert paid == -0.5


def test_legitimate_two_switch_chain(small_grid):
    # subsidised 1 -> 2 followed instantly by a cheap 2 -> 3 into the
    # profitable mode: a chain of exactly m - 1 = 2 switches at t = 0
    costs = [["0", "-(0.4 * (1 - t))", "0.6"],
             ["1", "0", "0.01"],
             ["1", "1", "0"]]
    p = make_problem(["0", "0", "1"], costs, neg_cost_bound=1)
    pol = extract_policy(_solved(p, small_grid), p)
    stats = simulate(p, pol, path_count=250, seed=17, record_paths=2)
    assert stats.guard_tripped == 0
    assert stats.switch_histogram == {2: 250}
    assert stats.negative_cost_switch_histogram == {1: 250}
    assert abs(stats.mean_j - (0.4 - 0.01 + 1.0)) <= 1e-12
    rec = stats.records[0]
    assert [(s[0], s[1], s[2]) for s in rec.switches] == [(0.0, 1, 2), (0.0, 2, 3)]


def test_guard_trips_on_zero_sum_pair(tiny_grid):
    # g12 + g21 = 0 makes both obstacles bind: the policy loops 1->2->1
    p = make_problem(["0", "0"], [["0", "1"], ["-1", "0"]], neg_cost_bound=1)
    field = _solved(p, tiny_grid)
    pol = extract_policy(field, p)
    stats = simulate(p, pol, path_count=50, seed=2)
    assert stats.guard_tripped == 50
    assert stats.completed == 0


def test_guard_zero_on_validated_problem(small_grid):
    p = make_problem(["x1", "1 - x1"], [["0", "0.05"], ["0.05", "0"]])
    pol = extract_policy(_solved(p, small_grid), p)
    stats = simulate(p, pol, path_count=2000, seed=8)
    assert stats.guard_tripped == 0


def test_domain_error_surfaces_with_fragment():
    from optswitch.expr import ExprDomainError

    # grid nodes stay positive, but simulated paths cross zero and hit the
    # log domain violation
    grid = GridSpec(time_steps=20, x_lo=0.25, x_hi=2.0, nodes=11)
    p = make_problem(["log(x1)"], [["0"]], drift="0", sigma="1", x0=(1.0,))
    pol = extract_policy(_solved(p, grid), p)
    with pytest.raises(ExprDomainError) as err:
        simulate(p, pol, path_count=500, seed=4)
    assert "log(x1)" in str(err.value)


# ---------------------------------------------------------------------------
# Fixed strategies


def test_never_switch_zero_profit(small_grid):
    p = make_problem(["0", "1"], [["0", "0.5"], ["0.5", "0"]])
    stats = evaluate_fixed_strategy(p, small_grid, TimedStrategy(()), 200, seed=1)
    assert stats.mean_j == 0.0
    assert stats.std_err == 0.0


def test_immediate_expensive_switch_is_dominated(small_grid):
    p = make_problem(["0", "1"], [["0", "10"], ["10", "0"]])
    stats = evaluate_fixed_strategy(p, small_grid, TimedStrategy(((0.0, 2),)), 400, seed=1)
    # pays 10, then earns at most 1
    assert stats.mean_j == pytest.approx(-9.0, abs=1e-9)
    assert stats.switch_histogram == {1: 400}


def test_timed_rule_at_horizon_never_fires(small_grid):
    p = make_problem(["0", "1"], [["0", "0.5"], ["0.5", "0"]])
    stats = evaluate_fixed_strategy(p, small_grid, TimedStrategy(((1.0, 2),)), 100, seed=1)
    assert stats.switch_histogram == {0: 100}


def test_threshold_strategy_budget_respected(small_grid):
    p = make_problem(["x1", "1 - x1"], [["0", "0.01"], ["0.01", "0"]])
    rules = (ThresholdRule(1, 2, 1, "<=", 0.9), ThresholdRule(2, 1, 1, ">=", 0.1))
    strat = ThresholdStrategy(rules=rules, budget=1)
    stats = evaluate_fixed_strategy(p, small_grid, strat, 300, seed=6)
    assert max(stats.switch_histogram) <= 1


def _wide_grid():
    # simulated paths roam freely, so the lattice domain must cover several
    # standard deviations for its value to be comparable with Monte Carlo
    return GridSpec(time_steps=25, x_lo=-4.0, x_hi=5.0, nodes=91)


def test_dominance_against_solved_value():
    grid = _wide_grid()
    p = make_problem(["x1", "1 - x1"], [["0", "0.05"], ["0.05", "0"]])
    field = _solved(p, grid)
    v0 = field.value_at(1, 0, p.x0)
    for idx, strat in enumerate(random_threshold_strategies(p, grid, 25, seed=11)):
        stats = evaluate_fixed_strategy(p, grid, strat, 1500, seed=100 + idx)
        assert stats.mean_j <= v0 + 3.0 * stats.std_err + 1e-12, strat.describe()


def test_optimal_simulation_consistent_with_value():
    grid = _wide_grid()
    p = make_problem(["x1", "1 - x1"], [["0", "0.05"], ["0.05", "0"]])
    field = _solved(p, grid)
    v0 = field.value_at(1, 0, p.x0)
    pol = extract_policy(field, p)
    stats = simulate(p, pol, path_count=40000, seed=13)
    assert abs(stats.mean_j - v0) <= 3.0 * stats.std_err + 1e-12


def test_policy_terminal_slice_must_be_continue(small_grid):
    dec = np.zeros((1, small_grid.time_steps + 1, small_grid.n_nodes), dtype=np.int16)
    dec[0, -1, 0] = 1
    with pytest.raises(ValueError):
        SwitchingPolicy(decisions=dec, grid=small_grid, horizon=1.0,
                        problem_hash="x", source_scheme="test", tol=1e-9)
