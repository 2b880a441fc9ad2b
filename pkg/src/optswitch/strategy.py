"""Switching policies, Monte Carlo evaluation and fixed strategies.

:func:`extract_policy` turns a solved value field into feedback form: at
every (time index, node, mode) either CONTINUE or SWITCH-TO(j), where a
switch is prescribed exactly when the value sits on its switching obstacle
(within a tolerance).  The first hitting time of that region along a path is
the discrete version of the optimal switching time.

:func:`simulate` runs Euler-Maruyama paths from x0, looks decisions up at
the *nearest grid node* (no interpolation: interpolated comparisons can
manufacture spurious switch regions near kinks, and nearest-node keeps the
simulated policy identical to the extracted region map), applies chains of
at most mode_count - 1 instantaneous switches, and accumulates the realised
profit J = integral of psi minus the costs paid.  A chain that wants an
m-th switch can only come from a zero-sum switching loop, which the
validated cost structure forbids, so such paths are aborted and counted by
the guard statistic.

Per-path randomness comes from contiguous blocks of a single Philox stream
keyed by the seed, so path i's draws depend only on (seed, i, step count):
results are reproducible bit for bit and independent of chunking or worker
count.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import _backend
from . import expr as ex
from ._kernels_np import euler_substeps, simulate_policy as _simulate_policy_np
from .field import ValueField, best_switch_targets
from .grid import GridSpec
from .problem import SwitchingProblem, fingerprint, tabulate_costs

__all__ = [
    "SwitchingPolicy",
    "extract_policy",
    "obstacle_gap",
    "PathRecord",
    "StrategyStats",
    "simulate",
    "TimedStrategy",
    "ThresholdRule",
    "ThresholdStrategy",
    "evaluate_fixed_strategy",
    "random_threshold_strategies",
]

_TIE = 1e-12
_CHUNK = 32768


# ---------------------------------------------------------------------------
# Policy


@dataclass(frozen=True)
class SwitchingPolicy:
    """Decision table: 0 = CONTINUE, j in 1..m = SWITCH-TO j (j != mode).
    The terminal slice is CONTINUE everywhere; strategies cannot switch at T.
    """

    decisions: np.ndarray        # int16 (m, N+1, n_nodes)
    grid: GridSpec
    horizon: float
    problem_hash: str
    source_scheme: str
    tol: float

    def __post_init__(self):
        m, nt, nn = self.decisions.shape
        if nt != self.grid.time_steps + 1 or nn != self.grid.n_nodes:
            raise ValueError("policy shape does not match its grid")
        if np.any(self.decisions[:, -1, :] != 0):
            raise ValueError("terminal slice must be CONTINUE everywhere")
        for i in range(m):
            if np.any(self.decisions[i] == i + 1):
                raise ValueError(f"mode {i + 1} switches to itself somewhere")
        if self.decisions.min() < 0 or self.decisions.max() > m:
            raise ValueError("decision targets out of range")

    @property
    def mode_count(self) -> int:
        return self.decisions.shape[0]


def extract_policy(field: ValueField, p: SwitchingProblem, tol: float = 1e-9) -> SwitchingPolicy:
    """Feedback strategy of the solved field: switch where the value touches
    its obstacle within ``tol``; target is the best mode, ties to smallest."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if field.problem_hash != fingerprint(p):
        raise ValueError("value field was solved for a different problem")
    cost = tabulate_costs(p, field.grid)
    n_steps = field.grid.time_steps
    m = p.mode_count
    dec = np.zeros((m, n_steps + 1, field.grid.n_nodes), dtype=np.int16)
    for n in range(n_steps):
        best, target = best_switch_targets(field.values[:, n], cost[:, :, n], tie=_TIE)
        switch = field.values[:, n] <= best + tol
        dec[:, n] = np.where(switch, target, 0)
    return SwitchingPolicy(decisions=dec, grid=field.grid, horizon=field.horizon,
                           problem_hash=field.problem_hash,
                           source_scheme=field.scheme, tol=tol)


def obstacle_gap(field: ValueField, p: SwitchingProblem):
    """Feasibility diagnostics of a solved field.

    Returns ``(worst_gap, terminal_max)``: the largest obstacle excess
    max_{j != i}(-g_ij + v_j) - v_i over all modes, nodes and t < T (a
    feasible field keeps this <= solver tolerance), and the largest absolute
    terminal value (must be exactly zero).
    """
    if field.problem_hash != fingerprint(p):
        raise ValueError("value field was solved for a different problem")
    cost = tabulate_costs(p, field.grid)
    worst = -np.inf
    for n in range(field.grid.time_steps):
        best, _ = best_switch_targets(field.values[:, n], cost[:, :, n], tie=_TIE)
        worst = max(worst, float(np.max(best - field.values[:, n])))
    terminal = float(np.max(np.abs(field.values[:, -1])))
    return worst, terminal


# ---------------------------------------------------------------------------
# Statistics


@dataclass(frozen=True)
class PathRecord:
    states: np.ndarray                       # (steps + 1, k) Euler path
    switches: tuple                          # (time, from_mode, to_mode, cost)
    profit_integral: float
    cost_total: float
    j_value: float
    guard_tripped: bool


@dataclass
class StrategyStats:
    path_count: int
    completed: int
    mean_j: float
    std_err: float
    switch_histogram: dict
    negative_cost_switch_histogram: dict
    guard_tripped: int
    seed: int
    substeps: int
    problem_hash: str
    strategy: str
    j_values: np.ndarray = dataclass_field(repr=False, default=None)
    profit_integrals: np.ndarray = dataclass_field(repr=False, default=None)
    cost_totals: np.ndarray = dataclass_field(repr=False, default=None)
    switch_counts: np.ndarray = dataclass_field(repr=False, default=None)
    guard_mask: np.ndarray = dataclass_field(repr=False, default=None)
    records: tuple = ()

    def render(self) -> str:
        def hist_text(h):
            return ";".join(f"{k}:{v}" for k, v in sorted(h.items())) or "-"
        lines = [
            "# optswitch strategy stats",
            f"problem_hash = {self.problem_hash}",
            f"strategy = {self.strategy}",
            f"paths = {self.path_count}",
            f"completed = {self.completed}",
            f"guard_tripped = {self.guard_tripped}",
            f"mean_j = {self.mean_j!r}",
            f"std_err = {self.std_err!r}",
            f"seed = {self.seed}",
            f"substeps = {self.substeps}",
            f"switch_histogram = {hist_text(self.switch_histogram)}",
            f"negative_switch_histogram = {hist_text(self.negative_cost_switch_histogram)}",
        ]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.render())

    def save_paths_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# problem_hash: {self.problem_hash}\n")
            fh.write("path,switches,J\n")
            for idx in range(self.path_count):
                if self.guard_mask[idx]:
                    continue
                fh.write(f"{idx},{int(self.switch_counts[idx])},"
                         f"{float(self.j_values[idx])!r}\n")

    @staticmethod
    def load_summary(path) -> dict:
        out: dict[str, str] = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, val = line.partition("=")
                out[key.strip()] = val.strip()
        return out


def _hist(counts: np.ndarray, mask: np.ndarray) -> dict:
    vals, freq = np.unique(counts[mask], return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, freq)}


def _finish_stats(profits, costs, switch_counts, neg_counts, guard, seed, substeps,
                  problem_hash, strategy, records=()):
    j_values = profits - costs
    ok = ~guard
    completed = int(ok.sum())
    if completed:
        done = j_values[ok]
        if np.ptp(done) == 0.0:  # deterministic payoff: the sample std is exactly 0
            mean_j, std_err = float(done[0]), 0.0
        else:
            mean_j = float(np.mean(done))
            sd = float(np.std(done, ddof=1)) if completed > 1 else 0.0
            std_err = sd / np.sqrt(completed)
    else:
        mean_j, std_err = float("nan"), float("nan")
    return StrategyStats(
        path_count=len(j_values),
        completed=completed,
        mean_j=mean_j,
        std_err=float(std_err),
        switch_histogram=_hist(switch_counts, ok),
        negative_cost_switch_histogram=_hist(neg_counts, ok),
        guard_tripped=int(guard.sum()),
        seed=int(seed),
        substeps=int(substeps),
        problem_hash=problem_hash,
        strategy=strategy,
        j_values=j_values,
        profit_integrals=profits,
        cost_totals=costs,
        switch_counts=switch_counts,
        guard_mask=guard,
        records=tuple(records),
    )


# ---------------------------------------------------------------------------
# Policy simulation


def _problem_exprs(p: SwitchingProblem):
    cost = tuple(tuple(p.cost[i][j] if i != j else ex.Num(0.0)
                       for j in range(p.mode_count)) for i in range(p.mode_count))
    return (p.drift, p.vol, p.profit, cost)


def _pack_problem(p: SwitchingProblem):
    k, d, m = p.state_dim, p.brownian_dim, p.mode_count
    drift, vol, profit, cost = _problem_exprs(p)
    exprs = list(drift)
    for row in vol:
        exprs.extend(row)
    exprs.extend(profit)
    for row in cost:
        exprs.extend(row)
    packed = ex.pack_programs(exprs)
    drift_ids = np.arange(k, dtype=np.int32)
    vol_ids = (k + np.arange(k * d, dtype=np.int32)).reshape(k, d)
    profit_ids = (k + k * d + np.arange(m, dtype=np.int32))
    cost_ids = (k + k * d + m + np.arange(m * m, dtype=np.int32)).reshape(m, m)
    return packed, drift_ids, vol_ids, profit_ids, cost_ids


def simulate(p: SwitchingProblem, policy: SwitchingPolicy, path_count: int,
             seed: int, substeps: int = 1, record_paths: int = 0) -> StrategyStats:
    """Monte Carlo estimate of the expected total profit under ``policy``.

    Fixed ``(seed, path_count, substeps)`` give bit-identical results on
    repeated runs; paths are independent work items.  ``record_paths`` keeps
    full :class:`PathRecord` diagnostics for the first few paths.
    """
    if path_count < 1:
        raise ValueError("path_count must be >= 1")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if policy.problem_hash != fingerprint(p):
        raise ValueError("policy was extracted for a different problem")
    grid = policy.grid
    n_steps = grid.time_steps
    times = grid.times(p.horizon)
    dt_sub = grid.dt(p.horizon) / substeps
    sqrt_dt_sub = float(np.sqrt(dt_sub))
    steps = n_steps * substeps
    k, d, m = p.state_dim, p.brownian_dim, p.mode_count
    lo = np.asarray(grid.x_lo)
    inv_dx = 1.0 / np.asarray(grid.spacing)
    dims = np.asarray(grid.nodes, dtype=np.int64)
    x0 = np.asarray(p.x0)

    use_numba = _backend.backend_name() == "numba"
    if use_numba:
        packed, drift_ids, vol_ids, profit_ids, cost_ids = _pack_problem(p)

    profits = np.zeros(path_count)
    costs = np.zeros(path_count)
    switch_counts = np.zeros(path_count, dtype=np.int64)
    neg_counts = np.zeros(path_count, dtype=np.int64)
    guard = np.zeros(path_count, dtype=bool)

    rng = np.random.Generator(np.random.Philox(seed))
    record_paths = min(record_paths, path_count)
    chunk = min(path_count, max(_CHUNK, record_paths))
    z_records = None
    start = 0
    while start < path_count:
        stop = min(start + chunk, path_count)
        z = rng.standard_normal((stop - start, steps, d))
        if start == 0 and record_paths:
            z_records = z[:record_paths].copy()
        if use_numba:
            from . import _kernels_nb
            np_prof = np.zeros(stop - start)
            np_cost = np.zeros(stop - start)
            np_sw = np.zeros(stop - start, dtype=np.int64)
            np_neg = np.zeros(stop - start, dtype=np.int64)
            np_guard = np.zeros(stop - start, dtype=bool)
            err_prog = np.full(stop - start, -1, dtype=np.int32)
            err_op = np.full(stop - start, -1, dtype=np.int32)
            _kernels_nb.simulate_policy(
                packed.code, packed.arg, packed.consts, packed.table, packed.stack_need,
                drift_ids, vol_ids, profit_ids, cost_ids,
                x0, p.initial_mode, policy.decisions, dims, lo, inv_dx,
                times, dt_sub, sqrt_dt_sub, substeps, z,
                np_prof, np_cost, np_sw, np_neg, np_guard, err_prog, err_op)
            bad = np.nonzero(err_prog >= 0)[0]
            if bad.size:
                pth = int(bad[0])
                frag = packed.fragment(int(err_prog[pth]), int(err_op[pth]))
                raise ex.ExprDomainError(frag, f"domain violation on path {start + pth}")
            profits[start:stop] = np_prof
            costs[start:stop] = np_cost
            switch_counts[start:stop] = np_sw
            neg_counts[start:stop] = np_neg
            guard[start:stop] = np_guard
        else:
            out = _simulate_policy_np(_problem_exprs(p), x0, p.initial_mode,
                                      policy.decisions, dims, lo, inv_dx,
                                      times, dt_sub, sqrt_dt_sub, substeps, z)
            (profits[start:stop], costs[start:stop], switch_counts[start:stop],
             neg_counts[start:stop], guard[start:stop]) = out
        start = stop

    records = []
    for r in range(record_paths):
        records.append(_simulate_single(p, policy, z_records[r], substeps))
    return _finish_stats(profits, costs, switch_counts, neg_counts, guard,
                         seed, substeps, policy.problem_hash,
                         f"optimal({policy.source_scheme})", records)


def _simulate_single(p: SwitchingProblem, policy: SwitchingPolicy, z_row, substeps) -> PathRecord:
    """Reference per-path simulation with full diagnostics (slow path)."""
    grid = policy.grid
    times = grid.times(p.horizon)
    dt_sub = grid.dt(p.horizon) / substeps
    sqrt_dt_sub = float(np.sqrt(dt_sub))
    k, d, m = p.state_dim, p.brownian_dim, p.mode_count
    drift, vol, profit, cost = _problem_exprs(p)
    x = np.array(p.x0, dtype=np.float64)
    mode = p.initial_mode
    states = [x.copy()]
    switches = []
    prof = 0.0
    cst = 0.0
    tripped = False
    for n in range(grid.time_steps):
        t_n = times[n]
        chain = 0
        while True:
            node = grid.nearest_node(x)
            dec = int(policy.decisions[mode - 1, n, node])
            if dec == 0 or dec == mode:
                break
            if chain == m - 1:
                tripped = True
                break
            paid = ex.evaluate(cost[mode - 1][dec - 1], t_n, x)
            cst += paid
            switches.append((float(t_n), mode, dec, paid))
            mode = dec
            chain += 1
        if tripped:
            break
        for ss in range(substeps):
            tau = times[n] + ss * dt_sub
            step = n * substeps + ss
            prof += ex.evaluate(profit[mode - 1], tau, x) * dt_sub
            bv = [ex.evaluate(drift[a], tau, x) for a in range(k)]
            newx = np.empty(k)
            for a in range(k):
                inc = 0.0
                for w in range(d):
                    inc += ex.evaluate(vol[a][w], tau, x) * (sqrt_dt_sub * z_row[step, w])
                newx[a] = x[a] + bv[a] * dt_sub + inc
            x = newx
            states.append(x.copy())
    return PathRecord(states=np.asarray(states), switches=tuple(switches),
                      profit_integral=prof, cost_total=cst, j_value=prof - cst,
                      guard_tripped=tripped)


# ---------------------------------------------------------------------------
# Fixed (user-supplied) strategies


@dataclass(frozen=True)
class TimedStrategy:
    """Switch at the first grid time >= each rule time; rules sorted by time.
    Rules timed at or after the horizon never fire (no switching at T)."""

    switches: tuple        # ((time, to_mode), ...)

    def __post_init__(self):
        object.__setattr__(self, "switches",
                           tuple(sorted((float(t), int(j)) for t, j in self.switches)))

    def describe(self) -> str:
        body = ";".join(f"{t:g}>{j}" for t, j in self.switches)
        return f"timed:{body}" if body else "never"


@dataclass(frozen=True)
class ThresholdRule:
    from_mode: int
    to_mode: int
    coord: int             # 1-based state coordinate
    op: str                # "<=" or ">="
    level: float

    def __post_init__(self):
        if self.op not in ("<=", ">="):
            raise ValueError("op must be '<=' or '>='")
        if self.from_mode == self.to_mode:
            raise ValueError("threshold rule must change the mode")


@dataclass(frozen=True)
class ThresholdStrategy:
    """State-triggered rules, checked in order at every grid time; each rule
    fires at most once, at most one rule per grid time, and the total number
    of switches is capped by ``budget`` (admissible by construction)."""

    rules: tuple
    budget: int = 5

    def describe(self) -> str:
        body = ";".join(f"{r.from_mode}>{r.to_mode}@x{r.coord}{r.op}{r.level:g}"
                        for r in self.rules)
        return f"threshold[{self.budget}]:{body}"


def evaluate_fixed_strategy(p: SwitchingProblem, grid: GridSpec, strategy,
                            path_count: int, seed: int, substeps: int = 1) -> StrategyStats:
    """Monte Carlo value of an explicit admissible strategy (numpy path).

    Used to exercise dominance: any such value is bounded by the solved
    v_{initial mode}(0, x0) up to Monte Carlo error.
    """
    if path_count < 1:
        raise ValueError("path_count must be >= 1")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if not isinstance(strategy, (TimedStrategy, ThresholdStrategy)):
        raise ValueError(f"unsupported strategy description: {strategy!r}")
    if isinstance(strategy, TimedStrategy):
        for _, j in strategy.switches:
            if not 1 <= j <= p.mode_count:
                raise ValueError("strategy switches to an unknown mode")
    else:
        for r in strategy.rules:
            if not (1 <= r.from_mode <= p.mode_count and 1 <= r.to_mode <= p.mode_count):
                raise ValueError("strategy references an unknown mode")
            if not 1 <= r.coord <= p.state_dim:
                raise ValueError("strategy references an unknown coordinate")

    exprs = _problem_exprs(p)
    n_steps = grid.time_steps
    times = grid.times(p.horizon)
    dt_sub = grid.dt(p.horizon) / substeps
    sqrt_dt_sub = float(np.sqrt(dt_sub))
    steps = n_steps * substeps
    m = p.mode_count
    cost = exprs[3]

    profits = np.zeros(path_count)
    costs = np.zeros(path_count)
    switch_counts = np.zeros(path_count, dtype=np.int64)
    neg_counts = np.zeros(path_count, dtype=np.int64)
    guard = np.zeros(path_count, dtype=bool)

    rng = np.random.Generator(np.random.Philox(seed))
    start = 0
    while start < path_count:
        stop = min(start + _CHUNK, path_count)
        z = rng.standard_normal((stop - start, steps, p.brownian_dim))
        n_paths = stop - start
        x = np.tile(np.asarray(p.x0), (n_paths, 1))
        mode = np.full(n_paths, p.initial_mode, dtype=np.int64)
        alive = np.ones(n_paths, dtype=bool)
        c_prof = np.zeros(n_paths)
        c_cost = np.zeros(n_paths)
        c_sw = np.zeros(n_paths, dtype=np.int64)
        c_neg = np.zeros(n_paths, dtype=np.int64)
        c_guard = np.zeros(n_paths, dtype=bool)
        if isinstance(strategy, ThresholdStrategy):
            used = np.zeros((n_paths, len(strategy.rules)), dtype=bool)
            budget = np.full(n_paths, strategy.budget, dtype=np.int64)
        ptr = 0
        for n in range(n_steps):
            t_n = times[n]
            if isinstance(strategy, TimedStrategy):
                chain = np.zeros(n_paths, dtype=np.int64)
                while ptr < len(strategy.switches) and strategy.switches[ptr][0] <= t_n:
                    to = strategy.switches[ptr][1]
                    ptr += 1
                    want = alive & (mode != to)
                    over = want & (chain >= m - 1)
                    if over.any():
                        c_guard |= over
                        alive &= ~over
                        want &= ~over
                    for i in range(1, m + 1):
                        grp = want & (mode == i)
                        if not grp.any():
                            continue
                        xg = [x[grp, a] for a in range(p.state_dim)]
                        paid = ex.evaluate_many(cost[i - 1][to - 1], t_n, xg)
                        c_cost[grp] += paid
                        c_neg[grp] += paid < 0.0
                    mode[want] = to
                    c_sw[want] += 1
                    chain[want] += 1
            else:
                fired = np.zeros(n_paths, dtype=bool)
                for r_idx, rule in enumerate(strategy.rules):
                    col = x[:, rule.coord - 1]
                    match = (col <= rule.level) if rule.op == "<=" else (col >= rule.level)
                    grp = (alive & ~fired & ~used[:, r_idx] & (budget > 0)
                           & (mode == rule.from_mode) & match)
                    if not grp.any():
                        continue
                    xg = [x[grp, a] for a in range(p.state_dim)]
                    paid = ex.evaluate_many(cost[rule.from_mode - 1][rule.to_mode - 1], t_n, xg)
                    c_cost[grp] += paid
                    c_neg[grp] += paid < 0.0
                    mode[grp] = rule.to_mode
                    c_sw[grp] += 1
                    used[grp, r_idx] = True
                    budget[grp] -= 1
                    fired |= grp
            act = np.nonzero(alive)[0]
            if act.size:
                euler_substeps(exprs, x, act, mode, times, n, substeps,
                               dt_sub, sqrt_dt_sub, z, c_prof)
        profits[start:stop] = c_prof
        costs[start:stop] = c_cost
        switch_counts[start:stop] = c_sw
        neg_counts[start:stop] = c_neg
        guard[start:stop] = c_guard
        start = stop
    return _finish_stats(profits, costs, switch_counts, neg_counts, guard,
                         seed, substeps, fingerprint(p), strategy.describe())


def random_threshold_strategies(p: SwitchingProblem, grid: GridSpec, count: int,
                                seed: int) -> list[ThresholdStrategy]:
    """Diverse admissible strategies for the dominance suite: threshold-in-x
    rules with uniform levels inside the grid box and switch budgets <= 5."""
    if p.mode_count < 2:
        raise ValueError("need at least two modes for switching strategies")
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    for _ in range(count):
        budget = int(rng.integers(1, 6))
        n_rules = int(rng.integers(1, 4))
        rules = []
        for _ in range(n_rules):
            i = int(rng.integers(1, p.mode_count + 1))
            j = int(rng.integers(1, p.mode_count))
            if j >= i:
                j += 1
            coord = int(rng.integers(1, p.state_dim + 1))
            op = "<=" if rng.integers(0, 2) == 0 else ">="
            lo, hi = grid.x_lo[coord - 1], grid.x_hi[coord - 1]
            level = float(rng.uniform(lo, hi))
            rules.append(ThresholdRule(i, j, coord, op, level))
        out.append(ThresholdStrategy(rules=tuple(rules), budget=budget))
    return out
