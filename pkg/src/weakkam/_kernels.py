"""Compiled inner loops.

Every kernel writes each output slot from a fixed-order scan, so results do
not depend on the number of worker threads.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def minplus_step(u, idx, wts, cost, out, arg):
    # u: (B, N) fields; idx: (N, M, C) interpolation corners per target node;
    # wts: (M, C) corner weights; cost: (N, M) one-step action.
    B, N = u.shape
    M, C = wts.shape
    for flat in prange(B * N):
        b = flat // N
        i = flat - b * N
        best = np.inf
        best_c = -1
        for c in range(M):
            acc = cost[i, c]
            for k in range(C):
                acc += wts[c, k] * u[b, idx[i, c, k]]
            if acc < best:
                best = acc
                best_c = c
        out[b, i] = best
        arg[b, i] = best_c


@njit(parallel=True, cache=True)
def minplus_step_batch(ut, idx, wts, cost, out, arg):
    # Same update as minplus_step on a node-major batch ut: (N, B), so the
    # innermost loop runs over contiguous sources.
    N, B = ut.shape
    M, C = wts.shape
    for i in prange(N):
        best = np.full(B, np.inf)
        best_c = np.full(B, -1, dtype=np.int64)
        acc = np.empty(B)
        for c in range(M):
            base = cost[i, c]
            for b in range(B):
                acc[b] = base
            for k in range(C):
                w = wts[c, k]
                j = idx[i, c, k]
                for b in range(B):
                    acc[b] += w * ut[j, b]
            for b in range(B):
                if acc[b] < best[b]:
                    best[b] = acc[b]
                    best_c[b] = c
        out[i, :] = best
        arg[i, :] = best_c


@njit(parallel=True, cache=True)
def minplus_matmul(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.empty((n, p))
    for i in prange(n):
        row = np.full(p, np.inf)
        for k in range(m):
            aik = a[i, k]
            for j in range(p):
                v = aik + b[k, j]
                if v < row[j]:
                    row[j] = v
        out[i, :] = row
    return out


@njit(parallel=True, cache=True)
def minplus_vecmat(u, a):
    # out[j] = min_k u[k] + a[k, j]
    m, p = a.shape
    out = np.empty(p)
    for j in prange(p):
        best = np.inf
        for k in range(m):
            v = u[k] + a[k, j]
            if v < best:
                best = v
        out[j] = best
    return out


@njit(parallel=True, cache=True)
def directed_hausdorff_sq(a, b, periods):
    # max over rows of a of the squared distance to the nearest row of b;
    # periods[k] > 0 marks a periodic coordinate.
    n, d = a.shape
    m = b.shape[0]
    best = np.empty(n)
    for i in prange(n):
        bi = np.inf
        for j in range(m):
            s = 0.0
            for k in range(d):
                diff = abs(a[i, k] - b[j, k])
                per = periods[k]
                if per > 0.0:
                    diff = diff % per
                    if per - diff < diff:
                        diff = per - diff
                s += diff * diff
                if s >= bi:
                    break
            if s < bi:
                bi = s
        best[i] = bi
    return best.max()
