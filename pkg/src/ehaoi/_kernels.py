"""Hot loops: relative value iteration sweeps and the slot-by-slot simulators.

Each kernel exists twice.  The ``*_nb`` variants are explicit loops compiled
with numba; the ``*_np`` variants are vectorised numpy.  Both consume the same
pre-drawn random arrays, so they return identical results.  Set
``EHAOI_DISABLE_NUMBA=1`` to force the numpy path.

Transition matrices are passed in ELL layout: ``idx[z, k]`` / ``w[z, k]`` hold
the ``k``-th stored successor of state ``z`` and its probability.  Every row of
the belief-MDP has the same number of stored entries, so no CSR indirection
is needed.

Simulation state arrays (``b, delta, btil, row, col``) are int64 and updated
in place.  Policy tables are int8 and indexed ``[row, col, r, delta-1]`` in
belief mode or ``[b, 0, r, delta-1]`` in battery mode.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("EHAOI_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")

BELIEF_MODE = 0
BATTERY_MODE = 1

KIND_PLAIN = 0      # follow per-sensor tables, no budget
KIND_TRUNCATE = 1   # per-sensor tables, random truncation to N
KIND_GREEDY = 2     # N largest-AoI requested sensors

RVIA_OK = 0
RVIA_MAXITER = 1
RVIA_NONFINITE = 2


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# relative value iteration
# --------------------------------------------------------------------------

def _bellman_q_loop(c0, idx0, w0, c1, idx1, w1, h):
    n = c0.shape[0]
    q0 = np.empty(n)
    q1 = np.empty(n)
    for z in range(n):
        s = c0[z]
        for k in range(idx0.shape[1]):
            s += w0[z, k] * h[idx0[z, k]]
        q0[z] = s
        s = c1[z]
        for k in range(idx1.shape[1]):
            s += w1[z, k] * h[idx1[z, k]]
        q1[z] = s
    return q0, q1


def _rvia_loop(c0, idx0, w0, c1, idx1, w1, h0, ref, theta, max_iter, tau):
    n = c0.shape[0]
    h = h0.copy()
    v_prev = h0.copy()
    v = np.empty(n)
    span = np.inf
    it = 0
    status = RVIA_MAXITER
    while it < max_iter:
        it += 1
        dmax = -np.inf
        dmin = np.inf
        finite = True
        for z in range(n):
            s0 = c0[z]
            for k in range(idx0.shape[1]):
                s0 += w0[z, k] * h[idx0[z, k]]
            s1 = c1[z]
            for k in range(idx1.shape[1]):
                s1 += w1[z, k] * h[idx1[z, k]]
            x = s1 if s1 < s0 else s0
            x = tau * x + (1.0 - tau) * h[z]
            v[z] = x
            d = x - v_prev[z]
            if d > dmax:
                dmax = d
            if d < dmin:
                dmin = d
            if not np.isfinite(x):
                finite = False
        span = dmax - dmin
        vref = v[ref]
        for z in range(n):
            h[z] = v[z] - vref
            v_prev[z] = v[z]
        if not finite:
            status = RVIA_NONFINITE
            break
        if span < theta:
            status = RVIA_OK
            break
    return v, h, it, span, status


def _bellman_q_np(c0, idx0, w0, c1, idx1, w1, h):
    q0 = c0 + (w0 * h[idx0]).sum(axis=1)
    q1 = c1 + (w1 * h[idx1]).sum(axis=1)
    return q0, q1


def _rvia_np(c0, idx0, w0, c1, idx1, w1, h0, ref, theta, max_iter, tau):
    h = h0.copy()
    v_prev = h0.copy()
    v = h0.copy()
    span = np.inf
    status = RVIA_MAXITER
    it = 0
    while it < max_iter:
        it += 1
        q0, q1 = _bellman_q_np(c0, idx0, w0, c1, idx1, w1, h)
        v = tau * np.where(q1 < q0, q1, q0) + (1.0 - tau) * h
        diff = v - v_prev
        span = diff.max() - diff.min()
        h = v - v[ref]
        v_prev = v
        if not np.all(np.isfinite(v)):
            status = RVIA_NONFINITE
            break
        if span < theta:
            status = RVIA_OK
            break
    return v, h, it, span, status


# --------------------------------------------------------------------------
# single-sensor simulation, lanes are independent episodes
# --------------------------------------------------------------------------

def _sim_lanes_loop(e, r, b, delta, btil, row, col, table, mode, M, B, delta_max,
                    t0, warmup, cost, cmds, upds):
    T, n = e.shape
    for i in range(n):
        bi = b[i]
        di = delta[i]
        ti = btil[i]
        ri = row[i]
        ci = col[i]
        for t in range(T):
            rq = r[t, i]
            if mode == 0:
                a = table[ri, ci, rq, di - 1]
            else:
                a = table[bi, 0, rq, di - 1]
            d = 1 if (a == 1 and bi >= 1) else 0
            if t0 + t >= warmup:
                if rq == 1:
                    cost[i] += 1 if d == 1 else min(di + 1, delta_max)
                cmds[i] += a
                upds[i] += d
            if a == 0:
                ci = min(ci + 1, M)
            elif d == 1:
                ri = bi
                ci = 0
            else:
                ri = 1
                ci = 0
            if d == 1:
                ti = bi
                di = 1
            else:
                di = min(di + 1, delta_max)
            bi = min(bi + e[t, i] - d, B)
        b[i] = bi
        delta[i] = di
        btil[i] = ti
        row[i] = ri
        col[i] = ci


def _sim_lanes_np(e, r, b, delta, btil, row, col, table, mode, M, B, delta_max,
                  t0, warmup, cost, cmds, upds):
    T = e.shape[0]
    for t in range(T):
        rq = r[t].astype(np.int64)
        if mode == 0:
            a = table[row, col, rq, delta - 1].astype(np.int64)
        else:
            a = table[b, 0, rq, delta - 1].astype(np.int64)
        d = a * (b >= 1)
        if t0 + t >= warmup:
            cost += rq * np.where(d == 1, 1, np.minimum(delta + 1, delta_max))
            cmds += a
            upds += d
        upd = d == 1
        cmd = a == 1
        row[:] = np.where(cmd, np.where(upd, b, 1), row)
        col[:] = np.where(cmd, 0, np.minimum(col + 1, M))
        btil[:] = np.where(upd, b, btil)
        delta[:] = np.where(upd, 1, np.minimum(delta + 1, delta_max))
        b[:] = np.minimum(b + e[t] - d, B)


# --------------------------------------------------------------------------
# multi-sensor simulation, lanes are coupled sensors
# --------------------------------------------------------------------------

def _sim_multi_loop(e, r, u, b, delta, btil, row, col, tables, stype, Mk, mode, kind, N,
                    B, delta_max, t0, warmup, cost, cmds, upds, slot_max):
    T, K = e.shape
    want = np.empty(K, dtype=np.int64)
    keys = np.empty(K)
    a = np.zeros(K, dtype=np.int64)
    for t in range(T):
        nw = 0
        for k in range(K):
            a[k] = 0
            rq = r[t, k]
            if kind == 2:
                w = rq
            elif mode == 0:
                w = tables[stype[k], row[k], col[k], rq, delta[k] - 1]
            else:
                w = tables[stype[k], b[k], 0, rq, delta[k] - 1]
            if w == 1:
                want[nw] = k
                if kind == 2:
                    keys[nw] = (delta_max - delta[k]) * K + k
                else:
                    keys[nw] = u[t, k]
                nw += 1
        if kind == 0 or nw <= N:
            for i in range(nw):
                a[want[i]] = 1
            ncmd = nw
        else:
            order = np.argsort(keys[:nw], kind="mergesort")
            for i in range(N):
                a[want[order[i]]] = 1
            ncmd = N
        if ncmd > slot_max[0]:
            slot_max[0] = ncmd
        count = t0 + t >= warmup
        for k in range(K):
            bk = b[k]
            dk = delta[k]
            ak = a[k]
            d = 1 if (ak == 1 and bk >= 1) else 0
            if count:
                if r[t, k] == 1:
                    cost[k] += 1 if d == 1 else min(dk + 1, delta_max)
                cmds[k] += ak
                upds[k] += d
            if ak == 0:
                col[k] = min(col[k] + 1, Mk[k])
            elif d == 1:
                row[k] = bk
                col[k] = 0
            else:
                row[k] = 1
                col[k] = 0
            if d == 1:
                btil[k] = bk
                delta[k] = 1
            else:
                delta[k] = min(dk + 1, delta_max)
            b[k] = min(bk + e[t, k] - d, B)


def _sim_multi_np(e, r, u, b, delta, btil, row, col, tables, stype, Mk, mode, kind, N,
                  B, delta_max, t0, warmup, cost, cmds, upds, slot_max):
    T, K = e.shape
    ids = np.arange(K)
    for t in range(T):
        rq = r[t].astype(np.int64)
        if kind == 2:
            want = rq == 1
            keys = ((delta_max - delta) * K + ids).astype(float)
        else:
            if mode == 0:
                want = tables[stype, row, col, rq, delta - 1] == 1
            else:
                want = tables[stype, b, 0, rq, delta - 1] == 1
            keys = u[t]
        nw = int(want.sum())
        if kind == 0 or nw <= N:
            a = want.astype(np.int64)
            ncmd = nw
        else:
            cand = ids[want]
            pick = cand[np.argsort(keys[cand], kind="mergesort")[:N]]
            a = np.zeros(K, dtype=np.int64)
            a[pick] = 1
            ncmd = N
        slot_max[0] = max(slot_max[0], ncmd)
        d = a * (b >= 1)
        if t0 + t >= warmup:
            cost += rq * np.where(d == 1, 1, np.minimum(delta + 1, delta_max))
            cmds += a
            upds += d
        upd = d == 1
        cmd = a == 1
        row[:] = np.where(cmd, np.where(upd, b, 1), row)
        col[:] = np.where(cmd, 0, np.minimum(col + 1, Mk))
        btil[:] = np.where(upd, b, btil)
        delta[:] = np.where(upd, 1, np.minimum(delta + 1, delta_max))
        b[:] = np.minimum(b + e[t] - d, B)


bellman_q_nb = _njit(_bellman_q_loop)
rvia_nb = _njit(_rvia_loop)
sim_lanes_nb = _njit(_sim_lanes_loop)
sim_multi_nb = _njit(_sim_multi_loop)


def backend(use_numba: bool | None = None) -> str:
    if use_numba is None:
        use_numba = USE_NUMBA
    return "numba" if use_numba and HAVE_NUMBA else "numpy"


def bellman_q(*args, use_numba=None):
    return (bellman_q_nb if backend(use_numba) == "numba" else _bellman_q_np)(*args)


def rvia(*args, use_numba=None):
    return (rvia_nb if backend(use_numba) == "numba" else _rvia_np)(*args)


def sim_lanes(*args, use_numba=None):
    return (sim_lanes_nb if backend(use_numba) == "numba" else _sim_lanes_np)(*args)


def sim_multi(*args, use_numba=None):
    return (sim_multi_nb if backend(use_numba) == "numba" else _sim_multi_np)(*args)
