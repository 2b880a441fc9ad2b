"""Numba kernel implementations (default backend).

Same floating-point operations in the same order as ``_kernels_np``; see that
module for the cross-backend equivalence contract.  Coefficient expressions
arrive as packed postfix programs (see ``expr.pack_programs``) executed by a
small stack machine, one instruction stream shared by every path.
"""

from __future__ import annotations

import numpy as np
from numba import config as _nb_config
from numba import njit, prange

# workqueue never depends on external TBB/OMP versions; path-parallel kernels
# write disjoint slots, so the layer cannot affect results
_nb_config.THREADING_LAYER = "workqueue"

# opcode values mirror expr.py
_CONST, _VAR_T, _VAR_X = 0, 1, 2
_ADD, _SUB, _MUL, _DIV, _NEG = 3, 4, 5, 6, 7
_EXP, _LOG, _SQRT, _ABS, _MIN, _MAX, _POW = 8, 9, 10, 11, 12, 13, 14


@njit(cache=True)
def _expect(probs_n, stay_n, targets, substeps, w):
    m, nn = w.shape
    ns = targets.shape[0]
    cur = w
    for _ in range(substeps):
        out = np.empty((m, nn))
        for i in range(m):
            for q in range(nn):
                acc = stay_n[q] * cur[i, q]
                for s in range(ns):
                    acc += probs_n[s, q] * cur[i, targets[s, q]]
                out[i, q] = acc
        cur = out
    return cur


@njit(cache=True)
def backward_zero(probs, stay, targets, substeps, psi, dt):
    n_steps = probs.shape[0]
    m = psi.shape[0]
    nn = psi.shape[2]
    v = np.zeros((m, n_steps + 1, nn))
    for n in range(n_steps - 1, -1, -1):
        w = _expect(probs[n], stay[n], targets, substeps, v[:, n + 1])
        for i in range(m):
            for q in range(nn):
                v[i, n, q] = psi[i, n, q] * dt + w[i, q]
    return v


@njit(cache=True)
def backward_level(probs, stay, targets, substeps, psi, dt, cost, v_prev):
    n_steps = probs.shape[0]
    m = psi.shape[0]
    nn = psi.shape[2]
    v = np.zeros((m, n_steps + 1, nn))
    for n in range(n_steps - 1, -1, -1):
        w = _expect(probs[n], stay[n], targets, substeps, v[:, n + 1])
        for i in range(m):
            for q in range(nn):
                cont = psi[i, n, q] * dt + w[i, q]
                best = -np.inf
                for j in range(m):
                    if j == i:
                        continue
                    cand = v_prev[j, n, q] - cost[i, j, n, q]
                    if cand > best:
                        best = cand
                v[i, n, q] = best if best > cont else cont
    return v


@njit(cache=True)
def backward_coupled(probs, stay, targets, substeps, psi, dt, cost):
    n_steps = probs.shape[0]
    m = psi.shape[0]
    nn = psi.shape[2]
    v = np.zeros((m, n_steps + 1, nn))
    sweeps = np.zeros(n_steps, dtype=np.int64)
    sup_obstacle = np.zeros(n_steps)
    cont = np.empty((m, nn))
    for n in range(n_steps - 1, -1, -1):
        w = _expect(probs[n], stay[n], targets, substeps, v[:, n + 1])
        for i in range(m):
            for q in range(nn):
                cont[i, q] = psi[i, n, q] * dt + w[i, q]
                v[i, n, q] = cont[i, q]
        used = 0
        while True:
            changed = False
            for i in range(m):
                for q in range(nn):
                    best = -np.inf
                    for j in range(m):
                        if j == i:
                            continue
                        cand = v[j, n, q] - cost[i, j, n, q]
                        if cand > best:
                            best = cand
                    if best > v[i, n, q]:
                        v[i, n, q] = best
                        changed = True
            if not changed:
                break
            used += 1
            if used > m - 1:
                sweeps[n] = -1
                return v, sweeps, sup_obstacle
        sweeps[n] = used
        sup = 0.0
        for i in range(m):
            for q in range(nn):
                diff = v[i, n, q] - cont[i, q]
                if diff > sup:
                    sup = diff
        sup_obstacle[n] = sup
    return v, sweeps, sup_obstacle


# ---------------------------------------------------------------------------
# Postfix stack machine


@njit(cache=True)
def _run(code, arg, consts, start, length, t, x, stack):
    """Execute one program; returns (value, -1) or (nan, local op index)."""
    sp = 0
    for pc in range(start, start + length):
        op = code[pc]
        if op == _CONST:
            stack[sp] = consts[arg[pc]]
            sp += 1
        elif op == _VAR_T:
            stack[sp] = t
            sp += 1
        elif op == _VAR_X:
            stack[sp] = x[arg[pc]]
            sp += 1
        elif op == _NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == _ADD:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == _SUB:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] - stack[sp]
        elif op == _MUL:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == _DIV:
            sp -= 1
            if stack[sp] == 0.0:
                return np.nan, pc - start
            stack[sp - 1] = stack[sp - 1] / stack[sp]
        elif op == _EXP:
            stack[sp - 1] = np.exp(stack[sp - 1])
        elif op == _LOG:
            if stack[sp - 1] <= 0.0:
                return np.nan, pc - start
            stack[sp - 1] = np.log(stack[sp - 1])
        elif op == _SQRT:
            if stack[sp - 1] < 0.0:
                return np.nan, pc - start
            stack[sp - 1] = np.sqrt(stack[sp - 1])
        elif op == _ABS:
            stack[sp - 1] = abs(stack[sp - 1])
        elif op == _MIN:
            sp -= 1
            if stack[sp] < stack[sp - 1]:
                stack[sp - 1] = stack[sp]
        elif op == _MAX:
            sp -= 1
            if stack[sp] > stack[sp - 1]:
                stack[sp - 1] = stack[sp]
        else:  # _POW
            sp -= 1
            base = stack[sp - 1]
            expo = stack[sp]
            if base < 0.0 and expo != np.trunc(expo):
                return np.nan, pc - start
            if base == 0.0 and expo < 0.0:
                return np.nan, pc - start
            stack[sp - 1] = base ** expo
        if not np.isfinite(stack[sp - 1]):
            return np.nan, pc - start
    return stack[0], -1


@njit(cache=True, parallel=True)
def simulate_policy(code, arg, consts, table, stack_need,
                    drift_ids, vol_ids, profit_ids, cost_ids,
                    x0, initial_mode, policy, dims, lo, inv_dx,
                    times, dt_sub, sqrt_dt_sub, substeps, z,
                    profits, costs, switch_counts, neg_counts, guard,
                    err_prog, err_op):
    n_paths = z.shape[0]
    k = x0.shape[0]
    d = z.shape[2]
    m = profit_ids.shape[0]
    n_steps = times.shape[0] - 1
    for p in prange(n_paths):
        x = np.empty(k)
        newx = np.empty(k)
        bv = np.empty(k)
        stack = np.empty(stack_need)
        for a in range(k):
            x[a] = x0[a]
        mode = initial_mode
        prof = 0.0
        cst = 0.0
        sw = 0
        neg = 0
        failed = False
        for n in range(n_steps):
            t_n = times[n]
            chain = 0
            while True:
                flat = 0
                for a in range(k):
                    idx = int(np.rint((x[a] - lo[a]) * inv_dx[a]))
                    if idx < 0:
                        idx = 0
                    elif idx >= dims[a]:
                        idx = dims[a] - 1
                    flat = flat * dims[a] + idx
                dec = int(policy[mode - 1, n, flat])
                if dec == 0 or dec == mode:
                    break
                if chain == m - 1:
                    guard[p] = True
                    break
                pid = cost_ids[mode - 1, dec - 1]
                val, eo = _run(code, arg, consts, table[pid, 0], table[pid, 1],
                               t_n, x, stack)
                if eo >= 0:
                    err_prog[p] = pid
                    err_op[p] = eo
                    failed = True
                    break
                cst += val
                if val < 0.0:
                    neg += 1
                sw += 1
                mode = dec
                chain += 1
            if guard[p] or failed:
                break
            for ss in range(substeps):
                tau = times[n] + ss * dt_sub
                step = n * substeps + ss
                pid = profit_ids[mode - 1]
                val, eo = _run(code, arg, consts, table[pid, 0], table[pid, 1],
                               tau, x, stack)
                if eo >= 0:
                    err_prog[p] = pid
                    err_op[p] = eo
                    failed = True
                    break
                prof += val * dt_sub
                for a in range(k):
                    pid = drift_ids[a]
                    bval, eo = _run(code, arg, consts, table[pid, 0], table[pid, 1],
                                    tau, x, stack)
                    if eo >= 0:
                        err_prog[p] = pid
                        err_op[p] = eo
                        failed = True
                        break
                    bv[a] = bval
                if failed:
                    break
                for a in range(k):
                    inc = 0.0
                    for w in range(d):
                        pid = vol_ids[a, w]
                        sval, eo = _run(code, arg, consts, table[pid, 0], table[pid, 1],
                                        tau, x, stack)
                        if eo >= 0:
                            err_prog[p] = pid
                            err_op[p] = eo
                            failed = True
                            break
                        inc += sval * (sqrt_dt_sub * z[p, step, w])
                    if failed:
                        break
                    newx[a] = x[a] + bv[a] * dt_sub + inc
                if failed:
                    break
                for a in range(k):
                    x[a] = newx[a]
            if failed:
                break
        profits[p] = prof
        costs[p] = cst
        switch_counts[p] = sw
        neg_counts[p] = neg
