"""Acceptance criteria A1-A10.

Every criterion runs at its stated tolerance on the standard two-mode GBM
benchmark (see ``configs/benchmark.ini``) or on the dedicated closed-form /
rejection instances, and prints one ``[A#] PASS|FAIL`` line (run pytest with
``-s`` to see them).
"""

import os

import numpy as np
import pytest

from optswitch import (build_chain, evaluate_fixed_strategy, extract_policy,
                       obstacle_gap, random_threshold_strategies, simulate,
                       solve_fixed_point, solve_n_switch, solve_system)
from optswitch.cli import main
from optswitch.problem import tabulate_costs

from conftest import benchmark_grid, benchmark_problem, make_problem
from oracles import unconstrained_value

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
SEED = 94607
PATHS = 100_000


def _verdict(tag, ok, detail):
    print(f"[{tag}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{tag}: {detail}"


@pytest.fixture(scope="module")
def bench():
    problem = benchmark_problem()
    grid = benchmark_grid()
    chain = build_chain(problem, grid)
    return problem, grid, chain


@pytest.fixture(scope="module")
def bench_levels(bench):
    problem, grid, chain = bench
    return solve_n_switch(chain, problem, 50, stop_tol=1e-8)


@pytest.fixture(scope="module")
def bench_lattice(bench):
    problem, grid, chain = bench
    field, _ = solve_fixed_point(chain, problem)
    return field


@pytest.fixture(scope="module")
def bench_pde(bench):
    problem, grid, _ = bench
    field, _ = solve_system(problem, grid)
    return field


@pytest.fixture(scope="module")
def bench_stats(bench, bench_lattice):
    problem, _, _ = bench
    policy = extract_policy(bench_lattice, problem, tol=1e-9)
    return simulate(problem, policy, PATHS, seed=SEED)


def test_a1_monotone_scheme(bench, bench_levels):
    fields, trace = bench_levels
    levels = len(fields) - 1
    worst = float(trace.min_increments[1:].min())
    last_sup = float(trace.entries[-1].sup_increment)
    ok = worst >= -1e-12 and last_sup < 1e-8 and levels <= 50
    _verdict("A1", ok, f"{levels} levels, node-wise increments >= {worst:.3g}, "
                       f"final sup increment {last_sup:.3g} < 1e-8")


def test_a2_obstacle_inequality(bench, bench_lattice, bench_pde):
    problem = bench[0]
    gap_l, term_l = obstacle_gap(bench_lattice, problem)
    gap_p, term_p = obstacle_gap(bench_pde, problem)
    ok = gap_l <= 1e-9 and gap_p <= 1e-8 and term_l == 0.0 and term_p == 0.0
    _verdict("A2", ok, f"worst obstacle excess lattice {gap_l:.3g} (tol 1e-9), "
                       f"pde {gap_p:.3g} (tol 1e-8); terminal slices exactly 0")


def test_a3_cross_engine_agreement(bench, bench_lattice, bench_pde):
    problem = bench[0]
    x0 = problem.x0

    def rel(f_lat, f_pde):
        v_l = f_lat.value_at(1, 0, x0)
        v_p = f_pde.value_at(1, 0, x0)
        return abs(v_l - v_p) / max(abs(v_l), abs(v_p), 1e-12), v_l, v_p

    r_coarse, v_l, v_p = rel(bench_lattice, bench_pde)
    fine_grid = benchmark_grid(refine=2)
    chain_f = build_chain(problem, fine_grid)
    lat_f, _ = solve_fixed_point(chain_f, problem)
    pde_f, _ = solve_system(problem, fine_grid)
    r_fine, _, _ = rel(lat_f, pde_f)
    ok = r_coarse <= 0.01 and r_fine <= 0.005
    _verdict("A3", ok, f"lattice {v_l:.8f} vs pde {v_p:.8f}: rel diff "
                       f"{r_coarse:.4%} <= 1% coarse, {r_fine:.4%} <= 0.5% refined")


def test_a4_optimal_policy_monte_carlo(bench, bench_lattice, bench_stats):
    problem = bench[0]
    v0 = bench_lattice.value_at(1, 0, problem.x0)
    gap = abs(bench_stats.mean_j - v0)
    bound = 3.0 * bench_stats.std_err + 1e-12
    ok = gap <= bound
    _verdict("A4", ok, f"|mean J - v| = {gap:.6f} <= 3 SE = {bound:.6f} "
                       f"({PATHS} paths, mean J {bench_stats.mean_j:.6f}, "
                       f"v {v0:.6f})")


def test_a5_dominance_of_random_strategies(bench, bench_lattice):
    problem, grid, _ = bench
    v0 = bench_lattice.value_at(1, 0, problem.x0)
    worst = -np.inf
    violations = 0
    strategies = random_threshold_strategies(problem, grid, 100, seed=SEED)
    for idx, strat in enumerate(strategies):
        stats = evaluate_fixed_strategy(problem, grid, strat, 2000, seed=SEED + idx + 1)
        excess = stats.mean_j - v0 - 3.0 * stats.std_err
        worst = max(worst, excess)
        violations += excess > 1e-12
    ok = violations == 0
    _verdict("A5", ok, f"100 random admissible strategies, {violations} dominance "
                       f"violations, worst mean J - (v + 3 SE) = {worst:.5f}")


def test_a6_closed_forms():
    grid = benchmark_grid()
    # single mode, constant profit
    p1 = make_problem(["2"], [["0"]], drift="0.05 * x1", sigma="0.2 * x1", x0=(4.0,))
    chain = build_chain(p1, grid)
    lat, _ = solve_fixed_point(chain, p1)
    pdf, _ = solve_system(p1, grid)
    e1 = max(float(np.max(np.abs(lat.values[0, 0] - 2.0))),
             float(np.max(np.abs(pdf.values[0, 0] - 2.0))))
    # two modes, switching never profitable
    p2 = make_problem(["1", "2"], [["0", "10"], ["10", "0"]],
                      drift="0.05 * x1", sigma="0.2 * x1", x0=(4.0,))
    chain2 = build_chain(p2, grid)
    lat2, _ = solve_fixed_point(chain2, p2)
    pdf2, _ = solve_system(p2, grid)
    e2 = 0.0
    for f in (lat2, pdf2):
        e2 = max(e2, float(np.max(np.abs(f.values[0, 0] - 1.0))),
                 float(np.max(np.abs(f.values[1, 0] - 2.0))))
    ok = e1 <= 1e-8 and e2 <= 1e-8
    _verdict("A6", ok, f"psi=2 gives cT=2 within {e1:.2e}; (1, 2) with g=10 gives "
                       f"(1, 2) within {e2:.2e}; both engines, tol 1e-8")


def test_a7_mode_swap_symmetry():
    grid = benchmark_grid()
    p = make_problem(["1 + 0.25 * x1", "1 + 0.25 * x1"], [["0", "0.3"], ["0.3", "0"]],
                     drift="0.05 * x1", sigma="0.2 * x1", x0=(4.0,))
    chain = build_chain(p, grid)
    lat, _ = solve_fixed_point(chain, p)
    pdf, _ = solve_system(p, grid)
    d_lat = float(np.max(np.abs(lat.values[0] - lat.values[1])))
    d_pde = float(np.max(np.abs(pdf.values[0] - pdf.values[1])))
    ok = d_lat <= 1e-12 and d_pde <= 1e-10
    _verdict("A7", ok, f"mode-swap symmetric values: lattice gap {d_lat:.2e} "
                       f"(tol 1e-12), pde gap {d_pde:.2e} (tol 1e-10)")


def test_a8_validator_gates_configs(tmp_path):
    rc_pair = main(["validate", "--config", os.path.join(CONFIG_DIR, "zero_pair_sum.ini"),
                    "--out", str(tmp_path / "pair")])
    rc_cycle = main(["validate", "--config", os.path.join(CONFIG_DIR, "zero_cycle.ini"),
                     "--out", str(tmp_path / "cycle")])
    rc_neg = main(["validate", "--config", os.path.join(CONFIG_DIR, "negative_cost.ini"),
                   "--out", str(tmp_path / "neg")])
    ok = rc_pair == 2 and rc_cycle == 2 and rc_neg == 0
    _verdict("A8", ok, f"exit codes: zero pair sum {rc_pair} (want 2), zero cycle "
                       f"{rc_cycle} (want 2), vanishing negative cost {rc_neg} (want 0)")


def test_a9_negative_cost_instance():
    from optswitch import GridSpec

    p = make_problem(["0", "0"], [["0", "-(0.5 * (1 - t))"], ["2", "0"]],
                     neg_cost_bound=1)
    coarse = GridSpec(time_steps=4, x_lo=0.0, x_hi=1.0, nodes=5)
    chain = build_chain(p, coarse)
    lat, _ = solve_fixed_point(chain, p, cross_check=True)
    oracle = np.asarray(unconstrained_value(chain, p))
    e_oracle = float(np.max(np.abs(lat.values - oracle)))
    e_closed = max(float(np.max(np.abs(lat.values[0, 0] - 0.5))),
                   float(np.max(np.abs(lat.values[1, 0] - 0.0))))
    pdf, _ = solve_system(p, coarse)
    e_pde = max(float(np.max(np.abs(pdf.values[0, 0] - 0.5))),
                float(np.max(np.abs(pdf.values[1, 0] - 0.0))))
    policy = extract_policy(lat, p, tol=1e-9)
    switches_at_0 = bool(np.all(policy.decisions[0, 0, :] == 2))
    never_again = bool(np.all(policy.decisions[1] == 0))
    stats = simulate(p, policy, 500, seed=SEED, record_paths=4)
    one_switch = stats.switch_histogram == {1: 500}
    first = stats.records[0].switches[0]
    ok = (e_oracle <= 1e-8 and e_closed <= 1e-8 and e_pde <= 1e-8
          and switches_at_0 and never_again and one_switch
          and first[:3] == (0.0, 1, 2))
    _verdict("A9", ok, f"v=(0.5, 0) within {max(e_closed, e_pde):.2e}; enumeration "
                       f"oracle gap {e_oracle:.2e}; policy switches 1->2 at t=0 "
                       f"everywhere and never again ({stats.switch_histogram})")


def test_a10_admissibility_guard(bench_stats, tmp_path):
    # passing configs never trip the guard at full path count
    p_neg = make_problem(["0", "0"], [["0", "-(0.5 * (1 - t))"], ["2", "0"]],
                         neg_cost_bound=1)
    from optswitch import GridSpec
    grid = GridSpec(time_steps=50, x_lo=0.0, x_hi=1.0, nodes=21)
    chain = build_chain(p_neg, grid)
    lat, _ = solve_fixed_point(chain, p_neg)
    stats_neg = simulate(p_neg, extract_policy(lat, p_neg), PATHS, seed=SEED)
    # the corrupted config, forced through, must demonstrably trip it
    out = str(tmp_path)
    cfg = os.path.join(CONFIG_DIR, "corrupted_loop.ini")
    rc_solve = main(["solve", "--config", cfg, "--out", out, "--force"])
    rc_sim = main(["simulate", "--config", cfg, "--out", out,
                   "--valuefield", os.path.join(out, "value_lattice.txt")])
    ok = (bench_stats.guard_tripped == 0 and stats_neg.guard_tripped == 0
          and rc_solve == 0 and rc_sim == 4)
    _verdict("A10", ok, f"guard trips: benchmark 0/{PATHS}, negative-cost 0/{PATHS}; "
                        f"corrupted --force run exits {rc_sim} (want 4) with the "
                        f"1->2->1 chain caught")
