"""Finite-difference solver for the coupled variational-inequality system.

Independent cross-check of the lattice engine: backward implicit Euler on
the same grid, with the per-mode equations

    min( v_i - max_{j != i}(-g_ij + v_j),  -d_t v_i - A v_i - psi_i ) = 0

solved at every time slice as one monolithic linear complementarity problem
over all (mode, node) unknowns by Howard policy iteration.  Each node in
each mode carries a decision, CONTINUE or SWITCH-TO j: CONTINUE rows come
from (I - dt A_h), SWITCH rows pin v_i - v_j = -g_ij against the *current*
slice v_j (fully implicit obstacle).  Decisions improve greedily; ties
within 1e-12 keep CONTINUE, equal switch targets resolve to the smallest
mode, the same rule the policy extractor applies.

The discrete generator A_h uses central second differences, first-order
upwind drift, and a zero-second-derivative closure at the boundary (drift
there is kept only when it points into the grid, so the implicit matrix
stays an M-matrix).  In 2D the mixed term is carried by diagonal-corner
stencils and requires sigma.sigma^T to dominate it on the grid scale;
otherwise assembly refuses and recommends aligning the grid.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, GridAlignmentError, SolverBreakdownError
from .field import ConvergenceTrace, ValueField, best_switch_targets
from .grid import GridSpec
from .problem import SwitchingProblem, fingerprint, tabulate_costs, tabulate_diffusion, tabulate_profits

__all__ = ["DiscreteGenerator", "assemble", "solve_system"]

_TIE = 1e-12


@dataclass
class DiscreteGenerator:
    grid: GridSpec
    horizon: float
    problem_hash: str
    matrices: list                     # csr A_h per transition slice t_0..t_{N-1}
    central_drift_dx_limit: float      # largest dx at which central drift would
                                       # also have been monotone (diagnostic)


def _row_arrays_1d(grid: GridSpec, a_n: np.ndarray, b_n: np.ndarray):
    dx = grid.spacing[0]
    nn = grid.n_nodes
    up = a_n / (2.0 * dx * dx) + np.maximum(b_n, 0.0) / dx
    dn = a_n / (2.0 * dx * dx) + np.maximum(-b_n, 0.0) / dx
    # zero-curvature closure: no diffusion at the edge, drift only if inward
    up[0] = b_n[0] / dx if b_n[0] > 0.0 else 0.0
    dn[0] = 0.0
    dn[nn - 1] = -b_n[nn - 1] / dx if b_n[nn - 1] < 0.0 else 0.0
    up[nn - 1] = 0.0
    diag = -(up + dn)
    return sparse.diags([dn[1:], diag, up[:-1]], [-1, 0, 1], format="csr")


def _row_arrays_2d(grid: GridSpec, a_n: np.ndarray, b_n: np.ndarray, time_index: int):
    """a_n is (k, k, nodes), b_n is (k, nodes); nodes flat C order."""
    n0, n1 = grid.nodes
    dx0, dx1 = grid.spacing
    nn = grid.n_nodes
    i0, i1 = np.divmod(np.arange(nn), n1)
    in_x = (i0 > 0) & (i0 < n0 - 1)
    in_y = (i1 > 0) & (i1 < n1 - 1)
    both = in_x & in_y

    axx, ayy, axy = a_n[0, 0], a_n[1, 1], a_n[0, 1]
    cross = np.abs(axy) / (dx0 * dx1)
    bad = both & (axx / (dx0 * dx0) - cross < -1e-12 * max(1.0, float(np.abs(a_n).max())))
    bad |= both & (ayy / (dx1 * dx1) - cross < -1e-12 * max(1.0, float(np.abs(a_n).max())))
    if bad.any():
        q = int(np.argmax(bad))
        raise GridAlignmentError(
            f"mixed covariance term breaks monotonicity at time index {time_index}, node {q}: "
            f"need a_xx/dx^2 and a_yy/dy^2 >= |a_xy|/(dx dy); align the grid with the "
            f"diffusion axes or adjust dx/dy"
        )

    rows, cols, vals = [], [], []

    def add(mask, col_idx, weight):
        if not mask.any():
            return
        rows.append(np.nonzero(mask)[0])
        cols.append(col_idx[mask])
        vals.append(weight[mask])

    cross_used = np.where(both, cross, 0.0)
    half_x = np.where(in_x, axx / (2.0 * dx0 * dx0) - cross_used / 2.0, 0.0)
    half_y = np.where(in_y, ayy / (2.0 * dx1 * dx1) - cross_used / 2.0, 0.0)
    half_x = np.maximum(half_x, 0.0)
    half_y = np.maximum(half_y, 0.0)

    bx_pos = np.maximum(b_n[0], 0.0) / dx0
    bx_neg = np.maximum(-b_n[0], 0.0) / dx0
    by_pos = np.maximum(b_n[1], 0.0) / dx1
    by_neg = np.maximum(-b_n[1], 0.0) / dx1

    up_x_ok = i0 < n0 - 1
    dn_x_ok = i0 > 0
    up_y_ok = i1 < n1 - 1
    dn_y_ok = i1 > 0

    w_up_x = np.where(in_x, half_x + bx_pos, np.where(up_x_ok, bx_pos, 0.0))
    w_dn_x = np.where(in_x, half_x + bx_neg, np.where(dn_x_ok, bx_neg, 0.0))
    w_up_y = np.where(in_y, half_y + by_pos, np.where(up_y_ok, by_pos, 0.0))
    w_dn_y = np.where(in_y, half_y + by_neg, np.where(dn_y_ok, by_neg, 0.0))

    base = np.arange(nn)
    add(w_up_x > 0.0, base + n1, w_up_x)
    add(w_dn_x > 0.0, base - n1, w_dn_x)
    add(w_up_y > 0.0, base + 1, w_up_y)
    add(w_dn_y > 0.0, base - 1, w_dn_y)

    pos_part = np.where(both, np.maximum(axy, 0.0) / (2.0 * dx0 * dx1), 0.0)
    neg_part = np.where(both, np.maximum(-axy, 0.0) / (2.0 * dx0 * dx1), 0.0)
    add(pos_part > 0.0, base + n1 + 1, pos_part)
    add(pos_part > 0.0, base - n1 - 1, pos_part)
    add(neg_part > 0.0, base + n1 - 1, neg_part)
    add(neg_part > 0.0, base - n1 + 1, neg_part)

    total = w_up_x + w_dn_x + w_up_y + w_dn_y + 2.0 * pos_part + 2.0 * neg_part
    rows.append(base)
    cols.append(base)
    vals.append(-total)
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nn, nn))
    return mat.tocsr()


def assemble(p: SwitchingProblem, grid: GridSpec) -> DiscreteGenerator:
    """Discretise the diffusion generator on every transition slice."""
    if grid.state_dim not in (1, 2):
        raise ValueError("PDE solver supports state dimension 1 or 2")
    if p.state_dim != grid.state_dim:
        raise ValueError("grid dimension does not match the problem")
    b, a_cov = tabulate_diffusion(p, grid)
    n_steps = grid.time_steps
    matrices = []
    for n in range(n_steps):
        if grid.state_dim == 1:
            mat = _row_arrays_1d(grid, a_cov[0, 0, n], b[0, n])
        else:
            mat = _row_arrays_2d(grid, a_cov[:, :, n], b[:, n], n)
        off = mat - sparse.diags(mat.diagonal())
        if off.nnz and off.data.min() < 0.0:
            raise AssertionError(f"generator lost its M-matrix structure at slice {n}")
        if mat.diagonal().max() > 0.0:
            raise AssertionError(f"positive generator diagonal at slice {n}")
        matrices.append(mat)
    mag_b = np.abs(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        limits = np.where(mag_b > 0.0,
                          np.stack([a_cov[a, a] for a in range(p.state_dim)]) / mag_b,
                          np.inf)
    return DiscreteGenerator(
        grid=grid,
        horizon=p.horizon,
        problem_hash=fingerprint(p),
        matrices=matrices,
        central_drift_dx_limit=float(limits.min()),
    )


def solve_system(p: SwitchingProblem, grid: GridSpec, max_howard: int | None = None):
    """Backward implicit Euler with monolithic Howard policy iteration.

    Returns ``(ValueField, ConvergenceTrace)``; trace entries carry the
    Howard iteration count per slice in ``sweeps``.
    """
    gen = assemble(p, grid)
    psi = tabulate_profits(p, grid)
    cost = tabulate_costs(p, grid)
    m = p.mode_count
    nn = grid.n_nodes
    n_steps = grid.time_steps
    dt = grid.dt(p.horizon)
    cap = max_howard if max_howard is not None else m * nn + 2

    values = np.zeros((m, n_steps + 1, nn))
    trace = ConvergenceTrace(kind="pde")
    slice_entries: list[tuple] = []
    eye = sparse.identity(nn, format="csr")
    for n in range(n_steps - 1, -1, -1):
        t0 = _time.perf_counter()
        m_cont = (eye - dt * gen.matrices[n]).tocoo()
        m_cont_csr = m_cont.tocsr()
        # block diagonal over modes (the state generator is mode-independent)
        blk_row = np.concatenate([m_cont.row + i * nn for i in range(m)])
        blk_col = np.concatenate([m_cont.col + i * nn for i in range(m)])
        blk_val = np.tile(m_cont.data, m)
        q_cont = (values[:, n + 1] + dt * psi[:, n]).reshape(-1)

        dec = np.zeros(m * nn, dtype=np.int64)
        v_flat = None
        converged = False
        iters = 0
        for _ in range(cap):
            iters += 1
            keep = dec[blk_row] == 0
            rows = blk_row[keep]
            cols = blk_col[keep]
            vals = blk_val[keep]
            sw = np.nonzero(dec > 0)[0]
            if sw.size:
                i_idx = sw // nn
                q_idx = sw % nn
                j_idx = dec[sw] - 1
                rows = np.concatenate([rows, sw, sw])
                cols = np.concatenate([cols, sw, j_idx * nn + q_idx])
                vals = np.concatenate([vals, np.ones(sw.size), -np.ones(sw.size)])
            mat = sparse.coo_matrix((vals, (rows, cols)), shape=(m * nn, m * nn)).tocsc()
            rhs = q_cont.copy()
            if sw.size:
                rhs[sw] = -cost[i_idx, j_idx, n, q_idx]
            try:
                v_flat = splu(mat).solve(rhs)
            except RuntimeError as exc:
                raise SolverBreakdownError(n, str(exc)) from None
            if not np.all(np.isfinite(v_flat)):
                raise SolverBreakdownError(n, "non-finite solution")
            vv = v_flat.reshape(m, nn)
            resid = np.empty((m, nn))
            for i in range(m):
                resid[i] = m_cont_csr @ vv[i] - q_cont[i * nn:(i + 1) * nn]
            best, target = best_switch_targets(vv, cost[:, :, n], tie=_TIE)
            prefer_switch = (vv - best) < (resid - _TIE)
            new_dec = np.where(prefer_switch, target.astype(np.int64), 0).reshape(-1)
            if np.array_equal(new_dec, dec):
                converged = True
                break
            dec = new_dec
        if not converged:
            raise ConvergenceError(
                f"policy iteration did not settle within {cap} iterations at slice {n}",
                trace=trace)
        values[:, n] = v_flat.reshape(m, nn)
        sup = float(np.max(np.abs(values[:, n] - values[:, n + 1])))
        slice_entries.append((n, sup, iters, _time.perf_counter() - t0))
    for n, sup, iters, wall in reversed(slice_entries):
        trace.add(n, sup, 0.0, iters, wall)
    field = ValueField(values=values, grid=grid, horizon=p.horizon,
                       problem_hash=gen.problem_hash, scheme="pde")
    return field, trace
