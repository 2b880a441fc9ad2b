"""Pure-numpy kernel implementations (fallback backend).

Mirrors ``_kernels_nb`` operation for operation: accumulations run in the
same order, comparisons use the same predicates, so results agree bit for bit
with the numba backend (up to ULP-level libm differences for transcendental
coefficient expressions, which vectorised numpy may evaluate differently).
"""

from __future__ import annotations

import numpy as np

from . import expr as ex


def _expect_one_mode_set(probs_n, stay_n, targets, substeps, w):
    """Apply the substep stencil ``substeps`` times to w (modes, nodes)."""
    for _ in range(substeps):
        acc = stay_n * w
        for s in range(targets.shape[0]):
            acc += probs_n[s] * w[:, targets[s]]
        w = acc
    return w


def _obstacle(cost_n, v_now):
    """max_{j != i} (v_now[j] - g_ij) per mode; -inf when m == 1."""
    m, n_nodes = v_now.shape
    out = np.full((m, n_nodes), -np.inf)
    for i in range(m):
        for j in range(m):
            if j == i:
                continue
            np.maximum(out[i], v_now[j] - cost_n[i, j], out=out[i])
    return out


def backward_zero(probs, stay, targets, substeps, psi, dt):
    n_steps = probs.shape[0]
    m, _, n_nodes = psi.shape
    v = np.zeros((m, n_steps + 1, n_nodes))
    for n in range(n_steps - 1, -1, -1):
        w = _expect_one_mode_set(probs[n], stay[n], targets, substeps, v[:, n + 1])
        v[:, n] = psi[:, n] * dt + w
    return v


def backward_level(probs, stay, targets, substeps, psi, dt, cost, v_prev):
    n_steps = probs.shape[0]
    m, _, n_nodes = psi.shape
    v = np.zeros((m, n_steps + 1, n_nodes))
    for n in range(n_steps - 1, -1, -1):
        w = _expect_one_mode_set(probs[n], stay[n], targets, substeps, v[:, n + 1])
        cont = psi[:, n] * dt + w
        obst = _obstacle(cost[:, :, n], v_prev[:, n])
        v[:, n] = np.maximum(obst, cont)
    return v


def backward_coupled(probs, stay, targets, substeps, psi, dt, cost):
    """Direct coupled solve: continuation then same-slice obstacle sweeps
    (modes in increasing order, Gauss-Seidel).  ``sweeps[n] = -1`` flags a
    slice that still changed on the m-th sweep, which the no-free-loop
    condition forbids."""
    n_steps = probs.shape[0]
    m, _, n_nodes = psi.shape
    v = np.zeros((m, n_steps + 1, n_nodes))
    sweeps = np.zeros(n_steps, dtype=np.int64)
    sup_obstacle = np.zeros(n_steps)
    for n in range(n_steps - 1, -1, -1):
        w = _expect_one_mode_set(probs[n], stay[n], targets, substeps, v[:, n + 1])
        cont = psi[:, n] * dt + w
        v[:, n] = cont
        used = 0
        while True:
            changed = False
            for i in range(m):
                best = np.full(n_nodes, -np.inf)
                for j in range(m):
                    if j == i:
                        continue
                    np.maximum(best, v[j, n] - cost[i, j, n], out=best)
                upd = best > v[i, n]
                if upd.any():
                    v[i, n][upd] = best[upd]
                    changed = True
            if not changed:
                break
            used += 1
            if used > m - 1:
                sweeps[n] = -1
                return v, sweeps, sup_obstacle
        sweeps[n] = used
        sup_obstacle[n] = float(np.max(v[:, n] - cont)) if m > 1 else 0.0
    return v, sweeps, sup_obstacle


# ---------------------------------------------------------------------------
# Policy simulation (vectorised across paths)


def _nearest_nodes(x, lo, inv_dx, dims):
    """Flat node indices for an (P, k) state array."""
    flat = np.zeros(x.shape[0], dtype=np.int64)
    for a in range(x.shape[1]):
        idx = np.rint((x[:, a] - lo[a]) * inv_dx[a]).astype(np.int64)
        np.clip(idx, 0, dims[a] - 1, out=idx)
        flat = flat * dims[a] + idx
    return flat


def simulate_policy(exprs, x0, initial_mode, policy, dims, lo, inv_dx,
                    times, dt_sub, sqrt_dt_sub, substeps, z):
    """Simulate one chunk of paths under a grid policy.

    ``exprs`` carries the problem coefficient trees:
    (drift tuple, vol matrix, profit tuple, cost matrix).
    Returns (profits, costs, switch_counts, neg_counts, guard).
    """
    drift, vol, profit, cost = exprs
    n_paths = z.shape[0]
    k = len(drift)
    d = len(vol[0])
    m = len(profit)
    n_steps = len(times) - 1

    x = np.tile(np.asarray(x0, dtype=np.float64), (n_paths, 1))
    mode = np.full(n_paths, initial_mode, dtype=np.int64)
    alive = np.ones(n_paths, dtype=bool)
    guard = np.zeros(n_paths, dtype=bool)
    profits = np.zeros(n_paths)
    costs = np.zeros(n_paths)
    switch_counts = np.zeros(n_paths, dtype=np.int64)
    neg_counts = np.zeros(n_paths, dtype=np.int64)

    for n in range(n_steps):
        t_n = times[n]
        # instantaneous switch chains, at most m - 1 per decision time
        pending = alive.copy()
        for depth in range(m):
            if not pending.any():
                break
            node = _nearest_nodes(x, lo, inv_dx, dims)
            dec = policy[mode - 1, n, node].astype(np.int64)
            switching = pending & (dec != 0) & (dec != mode)
            if not switching.any():
                break
            if depth == m - 1:
                guard |= switching
                alive &= ~switching
                break
            for i in range(1, m + 1):
                for j in range(1, m + 1):
                    if i == j:
                        continue
                    grp = switching & (mode == i) & (dec == j)
                    if not grp.any():
                        continue
                    xg = [x[grp, a] for a in range(k)]
                    c = ex.evaluate_many(cost[i - 1][j - 1], t_n, xg)
                    costs[grp] += c
                    neg_counts[grp] += c < 0.0
            switch_counts[switching] += 1
            mode[switching] = dec[switching]
            pending = switching
        # Euler-Maruyama substeps with left-point profit accrual
        act = np.nonzero(alive)[0]
        if act.size == 0:
            continue
        euler_substeps(exprs, x, act, mode, times, n, substeps,
                       dt_sub, sqrt_dt_sub, z, profits)
    return profits, costs, switch_counts, neg_counts, guard


def euler_substeps(exprs, x, act, mode, times, n, substeps, dt_sub, sqrt_dt_sub,
                   z, profits):
    """Advance active paths across one decision interval, accruing profit at
    the left endpoint of each substep.  Mutates ``x`` and ``profits``."""
    drift, vol, profit, _ = exprs
    k = len(drift)
    d = len(vol[0])
    m = len(profit)
    for ss in range(substeps):
        tau = times[n] + ss * dt_sub
        step = n * substeps + ss
        xa = [x[act, a] for a in range(k)]
        psi_v = np.zeros(act.size)
        mode_act = mode[act]
        for i in range(1, m + 1):
            grp = mode_act == i
            if not grp.any():
                continue
            psi_v[grp] = ex.evaluate_many(profit[i - 1], tau, [col[grp] for col in xa])
        profits[act] += psi_v * dt_sub
        bv = [ex.evaluate_many(drift[a], tau, xa) for a in range(k)]
        newx = np.empty((act.size, k))
        for a in range(k):
            inc = np.zeros(act.size)
            for w in range(d):
                sig = ex.evaluate_many(vol[a][w], tau, xa)
                inc += sig * (sqrt_dt_sub * z[act, step, w])
            newx[:, a] = x[act, a] + bv[a] * dt_sub + inc
        x[act] = newx
