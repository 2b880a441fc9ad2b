#!/usr/bin/env python3
"""Timing comparison of the numba kernels against the pure-numpy fallback.

Runs the hot paths of the standard benchmark problem under both settings of
``OPTSWITCH_BACKEND`` and prints a table.  The two backends execute the same
floating-point operations in the same order, so the outputs are asserted
bit-identical before any timing is reported (the benchmark coefficients are
arithmetic-only, where that guarantee is exact).

Usage::

    python benchmarks/bench_backends.py [--paths 100000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np

from optswitch import _backend, build_chain, extract_policy, simulate, solve_fixed_point, solve_n_switch
from optswitch import expr as ex
from optswitch import GridSpec, SwitchingProblem


def benchmark_problem():
    k = 1
    return SwitchingProblem(
        horizon=1.0, state_dim=1, brownian_dim=1, mode_count=2,
        drift=(ex.parse("0.05 * x1", k),),
        vol=((ex.parse("0.2 * x1", k),),),
        profit=(ex.parse("x1 - 4", k), ex.parse("2 - 0.5 * x1", k)),
        cost=((ex.parse("0", k), ex.parse("0.3", k)),
              (ex.parse("0.3", k), ex.parse("0", k))),
        x0=(4.0,), neg_cost_bound=0)


def run_backend(name: str, paths: int, repeat: int):
    os.environ[_backend.ENV_VAR] = name
    problem = benchmark_problem()
    grid = GridSpec(time_steps=200, x_lo=0.625, x_hi=9.58, nodes=200)
    chain = build_chain(problem, grid)

    def best(fn):
        out = None
        elapsed = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            out = fn()
            elapsed = min(elapsed, time.perf_counter() - t0)
        return out, elapsed

    # warm-up triggers JIT compilation so it is not billed to the timings
    solve_fixed_point(chain, problem)
    (field, _), t_fixed = best(lambda: solve_fixed_point(chain, problem))
    (levels, _), t_levels = best(lambda: solve_n_switch(chain, problem, 50, stop_tol=1e-8))
    policy = extract_policy(field, problem, tol=1e-9)
    simulate(problem, policy, 1000, seed=1)  # sim kernel warm-up
    stats, t_sim = best(lambda: simulate(problem, policy, paths, seed=94607))
    return {
        "fixed_point_s": t_fixed,
        "n_switch_s": t_levels,
        "simulate_s": t_sim,
        "value_x0": field.value_at(1, 0, problem.x0),
        "mean_j": stats.mean_j,
        "j_values": stats.j_values,
        "field": field.values,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--paths", type=int, default=100_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    results = {}
    for name in ("numba", "numpy"):
        try:
            results[name] = run_backend(name, args.paths, args.repeat)
        except RuntimeError as exc:
            print(f"{name}: unavailable ({exc})")
    os.environ.pop(_backend.ENV_VAR, None)
    if len(results) == 2:
        assert np.array_equal(results["numba"]["field"], results["numpy"]["field"]), \
            "lattice backends diverged"
        assert np.array_equal(results["numba"]["j_values"], results["numpy"]["j_values"]), \
            "simulation backends diverged"
        print("cross-backend check: lattice fields and per-path payoffs are "
              "bit-identical\n")

    header = f"{'kernel':<26}" + "".join(f"{name:>12}" for name in results)
    print(header)
    print("-" * len(header))
    rows = [("coupled fixed point", "fixed_point_s"),
            ("n-switch to 1e-8", "n_switch_s"),
            (f"simulate {args.paths} paths", "simulate_s")]
    for label, key in rows:
        cells = "".join(f"{results[name][key]:>11.3f}s" for name in results)
        print(f"{label:<26}{cells}")
    any_result = next(iter(results.values()))
    print(f"\nvalue at (0, x0): {any_result['value_x0']:.8f}   "
          f"mean J: {any_result['mean_j']:.8f}")


if __name__ == "__main__":
    main()
