"""Numba-jitted twins of the pure-numpy lattice kernels.

Same contracts and array layout as :mod:`.numpy_backend`.  Inner loops use
direct index arithmetic throughout: view creation per edge costs more than
the arithmetic it wraps, so edge costs and pairing searches are inlined.
``fastmath`` stays off: runs must be bit-reproducible and agree with the
numpy path to rounding error.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = {"cache": True, "fastmath": False}


@njit(**_JIT)
def _pair_cost_at(values, a, b, perms, p, kind):
    """Squared matched cost of edge (a, b) under permutation row p."""
    Q = values.shape[1]
    N = values.shape[2]
    c = 0.0
    for l in range(Q):
        j = perms[p, l]
        for t in range(N):
            d = values[b, j, t] - values[a, l, t]
            if kind == 2:
                d -= np.round(d)
            c += d * d
    return c


@njit(**_JIT)
def _best_perm_at(values, a, b, perms, kind):
    """Index of the optimal permutation row (first minimum wins)."""
    P = perms.shape[0]
    best = np.inf
    arg = 0
    for p in range(P):
        c = _pair_cost_at(values, a, b, perms, p, kind)
        if c < best:
            best = c
            arg = p
    return arg, best


@njit(**_JIT)
def all_matchings(values, nbr, perms, kind):
    n, Q, _ = values.shape
    m = nbr.shape[1] // 2
    match = np.full((n, m, Q), -1, dtype=np.int64)
    for v in range(n):
        for i in range(m):
            w = nbr[v, 2 * i]
            if w >= 0:
                p, _ = _best_perm_at(values, v, w, perms, kind)
                for l in range(Q):
                    match[v, i, l] = perms[p, l]
    return match


@njit(**_JIT)
def matched_costs(values, nbr, match, kind):
    n, Q, N = values.shape
    m = nbr.shape[1] // 2
    out = np.zeros((n, m))
    for v in range(n):
        for i in range(m):
            w = nbr[v, 2 * i]
            if w < 0:
                continue
            c = 0.0
            for l in range(Q):
                j = match[v, i, l]
                for t in range(N):
                    d = values[w, j, t] - values[v, l, t]
                    if kind == 2:
                        d -= np.round(d)
                    c += d * d
            out[v, i] = c
    return out


@njit(**_JIT)
def moment_fields(values, nbr, match, kind, h):
    n, Q, N = values.shape
    m = nbr.shape[1] // 2
    M = np.zeros((n, m, m))
    deriv = np.empty((m, Q, N))
    for v in range(n):
        deriv[:] = 0.0
        for i in range(m):
            w = nbr[v, 2 * i]
            if w < 0:
                continue
            for l in range(Q):
                j = match[v, i, l]
                for t in range(N):
                    d = values[w, j, t] - values[v, l, t]
                    if kind == 2:
                        d -= np.round(d)
                    deriv[i, l, t] = d / h
        for i in range(m):
            for j in range(i, m):
                s = 0.0
                for l in range(Q):
                    for t in range(N):
                        s += deriv[i, l, t] * deriv[j, l, t]
                M[v, i, j] = s
                M[v, j, i] = s
    return M


@njit(**_JIT)
def sheet_derivatives(values, nbr, match, kind, h):
    n, Q, N = values.shape
    m = nbr.shape[1] // 2
    derivs = np.zeros((n, m, Q, N))
    for v in range(n):
        for i in range(m):
            w = nbr[v, 2 * i]
            if w < 0:
                continue
            for l in range(Q):
                j = match[v, i, l]
                for t in range(N):
                    d = values[w, j, t] - values[v, l, t]
                    if kind == 2:
                        d -= np.round(d)
                    derivs[v, i, l, t] = d / h
    return derivs


@njit(**_JIT)
def sweep_color(values, nbr, match, perms, parity, interior, color, kind):
    n, Q, N = values.shape
    m = nbr.shape[1] // 2
    acc = np.empty((Q, N))
    sigma = np.empty(Q, dtype=np.int64)
    for v in range(n):
        if parity[v] != color or not interior[v]:
            continue
        for l in range(Q):
            for t in range(N):
                acc[l, t] = 0.0
        cnt = 0
        for i in range(m):
            for back in range(2):
                w = nbr[v, 2 * i + back]
                if w < 0:
                    continue
                if back == 0:
                    for l in range(Q):
                        sigma[l] = match[v, i, l]
                else:
                    # invert the pairing stored on the neighbor's forward edge
                    for l in range(Q):
                        sigma[match[w, i, l]] = l
                for l in range(Q):
                    j = sigma[l]
                    for t in range(N):
                        d = values[w, j, t] - values[v, l, t]
                        if kind == 2:
                            d -= np.round(d)
                        acc[l, t] += d
                cnt += 1
        if cnt == 0:
            continue
        for l in range(Q):
            if kind == 1:
                nrm = 0.0
                for t in range(N):
                    x = values[v, l, t] + acc[l, t] / cnt
                    acc[l, t] = x
                    nrm += x * x
                nrm = np.sqrt(nrm)
                if nrm > 1e-12:
                    for t in range(N):
                        values[v, l, t] = acc[l, t] / nrm
            else:
                for t in range(N):
                    x = values[v, l, t] + acc[l, t] / cnt
                    if kind == 2:
                        x = x % 1.0
                    values[v, l, t] = x
        # updater owns all incident pairings
        for i in range(m):
            w = nbr[v, 2 * i]
            if w >= 0:
                p, _ = _best_perm_at(values, v, w, perms, kind)
                for l in range(Q):
                    match[v, i, l] = perms[p, l]
            w = nbr[v, 2 * i + 1]
            if w >= 0:
                p, _ = _best_perm_at(values, w, v, perms, kind)
                for l in range(Q):
                    match[w, i, l] = perms[p, l]
