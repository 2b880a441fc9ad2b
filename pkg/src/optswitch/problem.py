"""Problem instances for the finite-horizon multi-mode switching model.

A :class:`SwitchingProblem` owns the horizon, the diffusion coefficients of
the (mode-independent) state process, per-mode profit rates and the signed
switching-cost matrix.  :func:`validate` enforces the structural conditions
the cost matrix must satisfy before any solver runs:

(a) zero diagonal, g_ii = 0;
(b) g_ij + g_ji > 0 for every pair i != j;
(c) strictly positive total cost around every simple cycle of modes, so no
    money can be made by switching in a loop;
(d) any cost observed negative somewhere must vanish on the terminal slice;
(e) at most ``neg_cost_bound`` mode pairs may take negative values.

The coefficient expressions are black boxes, so these conditions are checked
on a finite sample of (t, x) points, normally the exact nodes the solvers
touch plus user extras; the report states this scope explicitly.  Polynomial
growth of the coefficients is a user obligation and is not checked.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .grid import GridSpec

__all__ = [
    "SwitchingProblem",
    "CheckResult",
    "ValidationReport",
    "validate",
    "grid_sample_points",
    "profit_rate",
    "switch_cost",
    "fingerprint",
    "tabulate_profits",
    "tabulate_costs",
    "tabulate_diffusion",
]


@dataclass(frozen=True)
class SwitchingProblem:
    horizon: float
    state_dim: int
    brownian_dim: int
    mode_count: int
    drift: tuple[ex.Expr, ...]                 # k components b_a(t, x)
    vol: tuple[tuple[ex.Expr, ...], ...]       # k x d matrix sigma(t, x)
    profit: tuple[ex.Expr, ...]                # m rates psi_i(t, x)
    cost: tuple[tuple[ex.Expr, ...], ...]      # m x m matrix g_ij(t, x)
    x0: tuple[float, ...]
    initial_mode: int = 1
    neg_cost_bound: int = 0

    def __post_init__(self):
        object.__setattr__(self, "drift", tuple(self.drift))
        object.__setattr__(self, "vol", tuple(tuple(r) for r in self.vol))
        object.__setattr__(self, "profit", tuple(self.profit))
        object.__setattr__(self, "cost", tuple(tuple(r) for r in self.cost))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        if self.brownian_dim < 1:
            raise ValueError("brownian_dim must be >= 1")
        if self.mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        if len(self.drift) != self.state_dim:
            raise ValueError(f"drift needs {self.state_dim} components")
        if len(self.vol) != self.state_dim or any(len(r) != self.brownian_dim for r in self.vol):
            raise ValueError(f"vol must be {self.state_dim} x {self.brownian_dim}")
        if len(self.profit) != self.mode_count:
            raise ValueError(f"profit needs {self.mode_count} entries")
        if len(self.cost) != self.mode_count or any(len(r) != self.mode_count for r in self.cost):
            raise ValueError(f"cost must be {self.mode_count} x {self.mode_count}")
        if len(self.x0) != self.state_dim:
            raise ValueError(f"x0 must have dimension {self.state_dim}")
        if not 1 <= self.initial_mode <= self.mode_count:
            raise ValueError("initial_mode out of range")
        if self.neg_cost_bound < 0:
            raise ValueError("neg_cost_bound must be >= 0")
        for e in self._all_exprs():
            top = ex.max_state_index(e)
            if top > self.state_dim:
                raise ValueError(
                    f"expression '{ex.to_source(e)}' uses x{top}, state_dim is {self.state_dim}"
                )

    def _all_exprs(self):
        yield from self.drift
        for row in self.vol:
            yield from row
        yield from self.profit
        for row in self.cost:
            yield from row


def fingerprint(p: SwitchingProblem) -> str:
    """Stable 16-hex-digit hash of the full problem definition."""
    parts = [
        repr(p.horizon), str(p.state_dim), str(p.brownian_dim), str(p.mode_count),
        str(p.initial_mode), str(p.neg_cost_bound),
        ",".join(repr(v) for v in p.x0),
        "|".join(ex.to_source(e) for e in p.drift),
        "|".join(ex.to_source(e) for r in p.vol for e in r),
        "|".join(ex.to_source(e) for e in p.profit),
        "|".join(ex.to_source(e) for r in p.cost for e in r),
    ]
    return hashlib.sha256(";".join(parts).encode()).hexdigest()[:16]


def profit_rate(p: SwitchingProblem, i: int, t: float, x) -> float:
    _check_mode(p, i)
    _check_point(p, x)
    return ex.evaluate(p.profit[i - 1], t, x)


def switch_cost(p: SwitchingProblem, i: int, j: int, t: float, x) -> float:
    """g_ij(t, x); the diagonal is zero by convention and is not evaluated."""
    _check_mode(p, i)
    _check_mode(p, j)
    _check_point(p, x)
    if i == j:
        return 0.0
    return ex.evaluate(p.cost[i - 1][j - 1], t, x)


def _check_mode(p: SwitchingProblem, i: int):
    if not 1 <= i <= p.mode_count:
        raise ValueError(f"mode {i} out of range 1..{p.mode_count}")


def _check_point(p: SwitchingProblem, x):
    if len(x) != p.state_dim:
        raise ValueError(f"state vector has dimension {len(x)}, expected {p.state_dim}")


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    witness: str | None = None


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]
    min_pair_sum: float
    min_cycle_sum: float
    negative_pair_count: int
    sample_count: int
    scope: str

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        lines = [f"overall: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"check {c.name}: {'pass' if c.passed else 'FAIL'} "
                         f"(margin {c.margin:.6g})" + (f" witness: {c.witness}" if c.witness else ""))
        lines.append(f"min pair sum: {self.min_pair_sum:.6g}")
        lines.append(f"min cycle sum: {self.min_cycle_sum:.6g}")
        lines.append(f"negative cost pairs observed: {self.negative_pair_count}")
        lines.append(f"samples: {self.sample_count}")
        lines.append(f"scope: {self.scope}")
        return "\n".join(lines) + "\n"


def grid_sample_points(p: SwitchingProblem, grid: GridSpec, extra=None):
    """All (t_n, x_node) combinations of the solver grid, plus optional extra
    points given as an iterable of (t, x_vector)."""
    times = grid.times(p.horizon)
    coords = grid.node_matrix
    t_pts = np.repeat(times, grid.n_nodes)
    x_pts = np.tile(coords, (len(times), 1))
    if extra:
        t_extra = np.array([float(t) for t, _ in extra])
        x_extra = np.array([[float(v) for v in x] for _, x in extra])
        if x_extra.shape[1] != p.state_dim:
            raise ValueError("extra sample points have wrong state dimension")
        t_pts = np.concatenate([t_pts, t_extra])
        x_pts = np.concatenate([x_pts, x_extra])
    return t_pts, x_pts


def _simple_cycles(m: int):
    """Directed simple cycles over modes 1..m, up to rotation (each starts at
    its smallest mode).  Length-2 cycles cover the pairwise condition."""
    for r in range(2, m + 1):
        for subset in itertools.combinations(range(1, m + 1), r):
            first, rest = subset[0], subset[1:]
            for perm in itertools.permutations(rest):
                yield (first, *perm)


def validate(p: SwitchingProblem, sample_points) -> ValidationReport:
    """Run checks (a)-(e) over the sample.  Failures are report entries, not
    exceptions; dimension mismatches in the sample are errors."""
    t_pts, x_pts = sample_points
    t_pts = np.asarray(t_pts, dtype=np.float64)
    x_pts = np.asarray(x_pts, dtype=np.float64)
    if t_pts.ndim != 1 or x_pts.ndim != 2 or len(t_pts) != len(x_pts):
        raise ValueError("sample points must be (t array, x matrix) of equal length")
    if x_pts.shape[1] != p.state_dim:
        raise ValueError(
            f"sample points have dimension {x_pts.shape[1]}, problem has {p.state_dim}"
        )
    if len(t_pts) == 0:
        raise ValueError("sample grid is empty")
    terminal = t_pts == p.horizon
    if not terminal.any():
        raise ValueError("sample grid must include points on the terminal slice t = T")

    m = p.mode_count
    x_cols = [x_pts[:, a] for a in range(p.state_dim)]
    g = np.zeros((m, m, len(t_pts)))
    for i in range(m):
        for j in range(m):
            g[i, j] = ex.evaluate_many(p.cost[i][j], t_pts, x_cols)

    def point_text(idx: int) -> str:
        xs = ", ".join(f"{v:.6g}" for v in x_pts[idx])
        return f"(t={t_pts[idx]:.6g}, x=[{xs}])"

    checks = []

    # (a) zero diagonal, exact
    worst = 0.0
    witness = None
    for i in range(m):
        bad = np.abs(g[i, i])
        k = int(np.argmax(bad))
        if bad[k] > worst:
            worst = float(bad[k])
            witness = f"g_{i + 1}{i + 1} = {g[i, i, k]:.6g} at {point_text(k)}"
    checks.append(CheckResult("diagonal-zero", worst == 0.0, worst,
                              witness if worst != 0.0 else None))

    # (b) pairwise sums strictly positive
    min_pair = np.inf
    witness = None
    for i in range(m):
        for j in range(i + 1, m):
            s = g[i, j] + g[j, i]
            k = int(np.argmin(s))
            if s[k] < min_pair:
                min_pair = float(s[k])
                witness = f"g_{i + 1}{j + 1} + g_{j + 1}{i + 1} = {s[k]:.6g} at {point_text(k)}"
    checks.append(CheckResult("pair-sum-positive", bool(min_pair > 0.0),
                              float(min_pair), witness if min_pair <= 0.0 else None))

    # (c) no free loop around any simple cycle
    min_cycle = np.inf
    witness = None
    for cyc in _simple_cycles(m):
        total = np.zeros(len(t_pts))
        legs = list(zip(cyc, cyc[1:] + (cyc[0],)))
        for a, b in legs:
            total += g[a - 1, b - 1]
        k = int(np.argmin(total))
        if total[k] < min_cycle:
            min_cycle = float(total[k])
            path = "->".join(str(v) for v in cyc + (cyc[0],))
            witness = f"cycle {path} sums to {total[k]:.6g} at {point_text(k)}"
    checks.append(CheckResult("no-free-loop", bool(min_cycle > 0.0),
                              float(min_cycle), witness if min_cycle <= 0.0 else None))

    # (d) costs seen negative anywhere must vanish at the horizon
    neg_pairs = []
    worst = 0.0
    witness = None
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            if np.any(g[i, j] < 0.0):
                neg_pairs.append((i + 1, j + 1))
                tail = np.abs(g[i, j, terminal])
                k = int(np.argmax(tail))
                if tail[k] > worst:
                    worst = float(tail[k])
                    term_idx = np.nonzero(terminal)[0][k]
                    witness = (f"g_{i + 1}{j + 1} takes negative values but is "
                               f"{g[i, j, term_idx]:.6g} at {point_text(term_idx)}")
    checks.append(CheckResult("negative-vanishes-at-horizon", worst == 0.0, worst,
                              witness if worst != 0.0 else None))

    # (e) number of pairs with observed negative values is bounded by K
    count = len(neg_pairs)
    over = count - p.neg_cost_bound
    witness = None
    if over > 0:
        pairs = ", ".join(f"({a},{b})" for a, b in neg_pairs)
        witness = f"{count} negative pairs {pairs} exceed bound K={p.neg_cost_bound}"
    checks.append(CheckResult("negative-pair-budget", over <= 0, float(-over), witness))

    scope = ("conditions checked on the finite sample only (solver grid nodes "
             "plus user extras); coefficients are black boxes, so behaviour off "
             "the sample and polynomial growth remain user obligations")
    return ValidationReport(
        checks=tuple(checks),
        min_pair_sum=float(min_pair),
        min_cycle_sum=float(min_cycle),
        negative_pair_count=count,
        sample_count=len(t_pts),
        scope=scope,
    )


# ---------------------------------------------------------------------------
# Grid tabulation used by both solver engines


def tabulate_profits(p: SwitchingProblem, grid: GridSpec) -> np.ndarray:
    """psi_i(t_n, x_q) as an (m, N+1, n_nodes) array."""
    times = grid.times(p.horizon)
    coords = grid.node_matrix
    t_flat = np.repeat(times, grid.n_nodes)
    x_cols = [np.tile(coords[:, a], len(times)) for a in range(p.state_dim)]
    out = np.zeros((p.mode_count, len(times), grid.n_nodes))
    for i in range(p.mode_count):
        out[i] = ex.evaluate_many(p.profit[i], t_flat, x_cols).reshape(len(times), grid.n_nodes)
    return out


def tabulate_costs(p: SwitchingProblem, grid: GridSpec) -> np.ndarray:
    """g_ij(t_n, x_q) as an (m, m, N+1, n_nodes) array; zero diagonal without
    evaluating the diagonal expressions."""
    times = grid.times(p.horizon)
    coords = grid.node_matrix
    t_flat = np.repeat(times, grid.n_nodes)
    x_cols = [np.tile(coords[:, a], len(times)) for a in range(p.state_dim)]
    m = p.mode_count
    out = np.zeros((m, m, len(times), grid.n_nodes))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            out[i, j] = ex.evaluate_many(p.cost[i][j], t_flat, x_cols).reshape(
                len(times), grid.n_nodes)
    return out


def tabulate_diffusion(p: SwitchingProblem, grid: GridSpec):
    """Drift vector and covariance sigma.sigma^T on transition slices.

    Returns ``(b, a)`` with shapes (k, N, n_nodes) and (k, k, N, n_nodes);
    coefficients are taken at slice-start times t_0 .. t_{N-1}.
    """
    times = grid.times(p.horizon)[:-1]
    coords = grid.node_matrix
    t_flat = np.repeat(times, grid.n_nodes)
    x_cols = [np.tile(coords[:, a], len(times)) for a in range(p.state_dim)]
    k, d = p.state_dim, p.brownian_dim
    shape = (len(times), grid.n_nodes)
    b = np.zeros((k,) + shape)
    sig = np.zeros((k, d) + shape)
    for a in range(k):
        b[a] = ex.evaluate_many(p.drift[a], t_flat, x_cols).reshape(shape)
        for w in range(d):
            sig[a, w] = ex.evaluate_many(p.vol[a][w], t_flat, x_cols).reshape(shape)
    a_cov = np.einsum("awnq,cwnq->acnq", sig, sig)
    return b, a_cov
