"""Markov-chain approximation and backward-induction solvers.

The state SDE is discretised as a controlled chain on the uniform grid that
is locally consistent with the drift and diffusion: upwinded drift keeps
every transition probability non-negative, the step mean matches b.dt
exactly, and the second moment matches sigma.sigma^T.dt plus the standard
upwind inflation |b_a|.dx_a.dt (reported, and audited against the exact
discrete formula at build time).  Mass that would leave the grid is folded
back onto the boundary node.

Probabilities must satisfy dt <= dx^2 / (sigma.sigma^T + dx |b|) nodewise.
Benchmarks routinely violate that at the requested value-grid resolution, so
the chain refines each value step into the smallest number of equal substeps
that keeps all probabilities non-negative; decisions and obstacles still
live on the value grid only.  Passing ``substeps`` explicitly disables the
refinement and makes an inadmissible step a hard error.

Solvers:

* :func:`solve_zero_switch`  -- plain expected integral of the profit rate;
* :func:`solve_n_switch`     -- value with at most n switches allowed, the
  monotone approximation scheme (level n uses the obstacle built from level
  n-1 at the same time slice);
* :func:`solve_fixed_point`  -- the unconstrained value, computed by a direct
  coupled backward sweep (same-slice Gauss-Seidel obstacle passes, at most
  mode_count - 1 of them) and optionally cross-checked against the n-switch
  limit.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import ConvergenceError, GridAlignmentError, InstantaneousLoopError, NegativeProbabilityError
from .field import ConvergenceTrace, ValueField
from .grid import GridSpec
from .problem import SwitchingProblem, fingerprint, tabulate_costs, tabulate_diffusion, tabulate_profits

__all__ = ["MarkovChainApprox", "build_chain", "solve_zero_switch",
           "solve_n_switch", "solve_fixed_point", "profit_envelope"]

_AUDIT_RTOL = 1e-10


@dataclass
class MarkovChainApprox:
    grid: GridSpec
    horizon: float
    problem_hash: str
    substeps: int                 # chain steps per value-grid step
    offsets: np.ndarray           # (S, k) int64 neighbour offsets (stay excluded)
    targets: np.ndarray           # (S, n_nodes) int64, boundary-folded
    probs: np.ndarray             # (N, S, n_nodes) substep probabilities
    stay: np.ndarray              # (N, n_nodes)
    max_mean_error: float         # audit: |stencil mean - b.dtau|
    max_moment_error: float       # audit: |second moment - exact upwind formula|
    consistency_defect: float     # sup |cov - sigma.sigma^T.dtau| / dtau

    @property
    def dt(self) -> float:
        return self.grid.dt(self.horizon)

    @property
    def dtau(self) -> float:
        return self.dt / self.substeps


def _stencil_rates(grid: GridSpec, b, a_cov):
    """Per-unit-time jump rates for every slot; returns (offsets, rates).

    1D slots: down, up.  2D adds the y axis and the four diagonal corners
    used to represent the mixed covariance term; that representation is
    monotone only when a_xx/dx^2 and a_yy/dy^2 dominate |a_xy|/(dx dy).
    """
    k = grid.state_dim
    dx = grid.spacing
    if k == 1:
        half = a_cov[0, 0] / (2.0 * dx[0] * dx[0])
        b_pos = np.maximum(b[0], 0.0) / dx[0]
        b_neg = np.maximum(-b[0], 0.0) / dx[0]
        offsets = np.array([[-1], [1]], dtype=np.int64)
        rates = np.stack([half + b_neg, half + b_pos], axis=1)  # (N, S, nodes)
        return offsets, rates
    axx, ayy, axy = a_cov[0, 0], a_cov[1, 1], a_cov[0, 1]
    cross = np.abs(axy) / (dx[0] * dx[1])
    base_x = axx / (dx[0] * dx[0]) - cross
    base_y = ayy / (dx[1] * dx[1]) - cross
    worst = min(base_x.min(), base_y.min())
    if worst < -1e-12 * max(1.0, float(np.abs(a_cov).max())):
        n_bad, q_bad = np.unravel_index(int(np.argmin(np.minimum(base_x, base_y))), base_x.shape)
        raise GridAlignmentError(
            f"mixed covariance term breaks monotonicity at time index {n_bad}, node {q_bad}: "
            f"need a_xx/dx^2 and a_yy/dy^2 >= |a_xy|/(dx dy); align the grid with the "
            f"diffusion axes or adjust dx/dy"
        )
    bx_pos = np.maximum(b[0], 0.0) / dx[0]
    bx_neg = np.maximum(-b[0], 0.0) / dx[0]
    by_pos = np.maximum(b[1], 0.0) / dx[1]
    by_neg = np.maximum(-b[1], 0.0) / dx[1]
    pos_part = np.maximum(axy, 0.0) / (2.0 * dx[0] * dx[1])
    neg_part = np.maximum(-axy, 0.0) / (2.0 * dx[0] * dx[1])
    offsets = np.array(
        [[-1, 0], [1, 0], [0, -1], [0, 1], [1, 1], [-1, -1], [1, -1], [-1, 1]],
        dtype=np.int64)
    rates = np.stack([
        np.maximum(base_x, 0.0) / 2.0 + bx_neg,
        np.maximum(base_x, 0.0) / 2.0 + bx_pos,
        np.maximum(base_y, 0.0) / 2.0 + by_neg,
        np.maximum(base_y, 0.0) / 2.0 + by_pos,
        pos_part, pos_part, neg_part, neg_part,
    ], axis=1)
    return offsets, rates


def _fold_targets(grid: GridSpec, offsets: np.ndarray) -> np.ndarray:
    idx = np.indices(grid.nodes)
    targets = np.zeros((len(offsets), grid.n_nodes), dtype=np.int64)
    for s, off in enumerate(offsets):
        shifted = [np.clip(idx[a] + off[a], 0, grid.nodes[a] - 1)
                   for a in range(grid.state_dim)]
        targets[s] = np.ravel_multi_index(shifted, grid.nodes).reshape(-1)
    return targets


def _audit_moments(grid, offsets, probs, b, a_cov, dtau):
    """Check built stencils against their exact discrete moments."""
    k = grid.state_dim
    dx = grid.spacing
    delta = offsets.astype(np.float64) * np.asarray(dx)          # (S, k)
    max_mean_err = 0.0
    max_m2_err = 0.0
    defect = 0.0
    means = [np.einsum("nsq,s->nq", probs, delta[:, a]) for a in range(k)]
    for a in range(k):
        target = b[a] * dtau
        scale = np.einsum("nsq,s->nq", probs, np.abs(delta[:, a])) + np.abs(target) + 1.0
        max_mean_err = max(max_mean_err, float(np.max(np.abs(means[a] - target) / scale)))
        for c in range(a, k):
            m2 = np.einsum("nsq,s->nq", probs, delta[:, a] * delta[:, c])
            target2 = a_cov[a, c] * dtau
            if a == c:
                target2 = target2 + np.abs(b[a]) * dx[a] * dtau  # upwind inflation
            scale2 = np.einsum("nsq,s->nq", probs, np.abs(delta[:, a] * delta[:, c])) \
                + np.abs(target2) + 1.0
            max_m2_err = max(max_m2_err, float(np.max(np.abs(m2 - target2) / scale2)))
            cov = m2 - means[a] * means[c]
            defect = max(defect, float(np.max(np.abs(cov - a_cov[a, c] * dtau) / dtau)))
    return max_mean_err, max_m2_err, defect


def build_chain(p: SwitchingProblem, grid: GridSpec, substeps: int | None = None) -> MarkovChainApprox:
    """Build the locally consistent chain for ``p`` on ``grid``.

    ``substeps=None`` picks the smallest refinement that keeps probabilities
    non-negative; an explicit value is honoured verbatim and raises
    :class:`NegativeProbabilityError` if inadmissible.
    """
    if grid.state_dim not in (1, 2):
        raise ValueError("lattice solver supports state dimension 1 or 2")
    if p.state_dim != grid.state_dim:
        raise ValueError("grid dimension does not match the problem")
    if not grid.contains_interior(p.x0):
        raise ValueError(f"x0={p.x0} must lie strictly inside the grid bounds")
    b, a_cov = tabulate_diffusion(p, grid)
    offsets, rates = _stencil_rates(grid, b, a_cov)
    if np.any(rates < 0.0):
        # negative axis rates can only come from roundoff once alignment passed
        rates = np.maximum(rates, 0.0)
    total = rates.sum(axis=1)                                    # (N, nodes)
    r_max = float(total.max())
    dt = grid.dt(p.horizon)
    if substeps is None:
        k_sub = max(1, int(np.ceil(dt * r_max - 1e-12))) if r_max > 0 else 1
    else:
        k_sub = int(substeps)
        if k_sub < 1:
            raise ValueError("substeps must be >= 1")
        if r_max > 0 and dt / k_sub > (1.0 + 1e-12) / r_max:
            n_bad, q_bad = np.unravel_index(int(np.argmax(total)), total.shape)
            raise NegativeProbabilityError(int(n_bad), int(q_bad), 1.0 / r_max)
    dtau = dt / k_sub
    probs = rates * dtau
    stay = 1.0 - total * dtau
    stay = np.maximum(stay, 0.0)  # clip roundoff-scale negatives only
    mean_err, m2_err, defect = _audit_moments(grid, offsets, probs, b, a_cov, dtau)
    if max(mean_err, m2_err) > _AUDIT_RTOL:
        raise AssertionError(
            f"chain stencil failed its moment audit (mean err {mean_err:.3g}, "
            f"second moment err {m2_err:.3g})"
        )
    return MarkovChainApprox(
        grid=grid,
        horizon=p.horizon,
        problem_hash=fingerprint(p),
        substeps=k_sub,
        offsets=offsets,
        targets=_fold_targets(grid, offsets),
        probs=probs,
        stay=stay,
        max_mean_error=mean_err,
        max_moment_error=m2_err,
        consistency_defect=defect,
    )


def _check_chain(chain: MarkovChainApprox, p: SwitchingProblem):
    if chain.problem_hash != fingerprint(p):
        raise ValueError("chain was built for a different problem instance")


def _field(chain, values, scheme) -> ValueField:
    return ValueField(values=values, grid=chain.grid, horizon=chain.horizon,
                      problem_hash=chain.problem_hash, scheme=scheme)


def solve_zero_switch(chain: MarkovChainApprox, p: SwitchingProblem) -> ValueField:
    """Expected cumulative profit with no switching allowed (level 0)."""
    _check_chain(chain, p)
    kern = _backend.kernels()
    psi = tabulate_profits(p, chain.grid)
    values = kern.backward_zero(chain.probs, chain.stay, chain.targets,
                                chain.substeps, psi, chain.dt)
    return _field(chain, values, "lattice-zero-switch")


def solve_n_switch(chain: MarkovChainApprox, p: SwitchingProblem, n_max: int,
                   stop_tol: float | None = None):
    """Levels 0..n of the at-most-n-switches scheme.

    Returns ``(fields, trace)`` where ``fields[l]`` is the l-switch value.
    Levels increase monotonically; each trace entry records the sup and the
    most negative node-wise increment of its level.  Iteration stops early
    once the sup increment falls below ``stop_tol`` (when given).
    """
    _check_chain(chain, p)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    kern = _backend.kernels()
    psi = tabulate_profits(p, chain.grid)
    cost = tabulate_costs(p, chain.grid)
    trace = ConvergenceTrace(kind="n-switch")
    t0 = _time.perf_counter()
    prev = kern.backward_zero(chain.probs, chain.stay, chain.targets,
                              chain.substeps, psi, chain.dt)
    fields = [_field(chain, prev, "lattice-n-switch-0")]
    trace.add(0, np.inf, 0.0, 1, _time.perf_counter() - t0)
    for level in range(1, n_max + 1):
        t0 = _time.perf_counter()
        cur = kern.backward_level(chain.probs, chain.stay, chain.targets,
                                  chain.substeps, psi, chain.dt, cost, prev)
        diff = cur - prev
        sup = float(np.max(np.abs(diff)))
        low = float(np.min(diff))
        trace.add(level, sup, low, 1, _time.perf_counter() - t0)
        fields.append(_field(chain, cur, f"lattice-n-switch-{level}"))
        prev = cur
        if stop_tol is not None and sup < stop_tol:
            break
    return fields, trace


def solve_fixed_point(chain: MarkovChainApprox, p: SwitchingProblem,
                      tol: float = 1e-8, max_outer: int = 50,
                      cross_check: bool = False):
    """Unconstrained switching value by the direct coupled backward sweep.

    ``tol`` is applied to increments normalised by (1 + sup|psi| * T).  With
    ``cross_check=True`` the n-switch limit is also computed and must agree
    with the direct sweep within the normalised tolerance; its level trace is
    attached as ``trace.companion``.
    """
    _check_chain(chain, p)
    if tol <= 0:
        raise ValueError("tol must be positive")
    kern = _backend.kernels()
    psi = tabulate_profits(p, chain.grid)
    cost = tabulate_costs(p, chain.grid)
    tol_eff = tol * (1.0 + float(np.max(np.abs(psi))) * p.horizon)
    t0 = _time.perf_counter()
    values, sweeps, sup_obstacle = kern.backward_coupled(
        chain.probs, chain.stay, chain.targets, chain.substeps, psi, chain.dt, cost)
    wall = _time.perf_counter() - t0
    bad = np.nonzero(sweeps < 0)[0]
    if bad.size:
        raise InstantaneousLoopError(int(bad[0]))
    trace = ConvergenceTrace(kind="coupled")
    n_steps = chain.grid.time_steps
    per_slice = wall / max(n_steps, 1)
    for n in range(n_steps):
        trace.add(n, sup_obstacle[n], 0.0, int(sweeps[n]), per_slice)
    field = _field(chain, values, "lattice-fixed-point")
    if cross_check:
        # iterate levels down to the raw tol (stricter than the normalised
        # one) so the trace is usable as monotone-convergence evidence
        fields, level_trace = solve_n_switch(chain, p, max_outer, stop_tol=tol)
        if level_trace.entries[-1].sup_increment >= tol_eff:
            raise ConvergenceError(
                f"n-switch scheme did not reach tol {tol_eff:.3g} within {max_outer} levels",
                trace=level_trace)
        gap = float(np.max(np.abs(fields[-1].values - values)))
        if gap > tol_eff:
            raise ConvergenceError(
                f"direct sweep and n-switch limit disagree by {gap:.3g} (tol {tol_eff:.3g})",
                trace=level_trace)
        trace.companion = level_trace
    return field, trace


def profit_envelope(chain: MarkovChainApprox, psi: np.ndarray) -> np.ndarray:
    """Backward expectation of int max_i |psi_i| dt on the chain at t=0.

    The a-priori bound on any n-switch value is this plus K times the largest
    sampled magnitude among costs that go negative.
    """
    kern = _backend.kernels()
    env = np.abs(psi).max(axis=0)[None, :, :]                    # (1, N+1, nodes)
    values = kern.backward_zero(chain.probs, chain.stay, chain.targets,
                                chain.substeps, env, chain.dt)
    return values[0, 0]
