"""Pure-numpy implementations of the lattice hot loops.

Array layout shared with the numba backend:

* ``values``   (n, Q, N) float64, node Q-points in target coordinates;
* ``nbr``      (n, 2m) int64, ``nbr[v, 2i]`` forward / ``nbr[v, 2i+1]``
  backward axis-``i`` neighbor, ``-1`` when absent;
* ``match``    (n, m, Q) int64, stored forward-edge sheet pairing:
  ``match[v, i, l]`` is the neighbor sheet paired with sheet ``l`` of ``v``,
  a ``-1`` row when the forward edge is absent;
* ``perms``    (P, Q) int64, all permutations in lexicographic order
  (ties in edge costs resolve to the first, i.e. smallest, permutation);
* ``kind``     target tag (0 euclidean, 1 sphere, 2 torus chart).

Sheet differences on the torus use the shortest chart representative so a
seam crossing never produces an O(1) edge cost.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

_CHUNK = 1 << 18


def _rep_diff(diff, kind):
    """In-chart difference representative (wraps per axis on the torus)."""
    if kind == 2:
        return diff - np.round(diff)
    return diff


def _pair_costs(a, b, perms, kind):
    """Matched costs for all permutations: a (k,Q,N), b (k,Q,N) -> (k,P)."""
    bp = b[:, perms, :]  # (k, P, Q, N)
    d = _rep_diff(bp - a[:, None, :, :], kind)
    return np.einsum("kpqn,kpqn->kp", d, d)


def _best_perms(a, b, perms, kind):
    """Optimal pairing per row of (k,Q,N) pairs -> (k,Q) permutations."""
    if perms is not None:
        costs = _pair_costs(a, b, perms, kind)
        return perms[np.argmin(costs, axis=1)]
    # large-Q path: cubic assignment solver per edge
    k, Q, _ = a.shape
    out = np.empty((k, Q), dtype=np.int64)
    for e in range(k):
        d = _rep_diff(b[e][None, :, :] - a[e][:, None, :], kind)
        cost = np.einsum("ijn,ijn->ij", d, d)
        rows, cols = linear_sum_assignment(cost)
        out[e, rows] = cols
    return out


def all_matchings(values, nbr, perms, kind):
    """Recompute optimal sheet pairings on every forward edge."""
    n, Q, _ = values.shape
    m = nbr.shape[1] // 2
    match = np.full((n, m, Q), -1, dtype=np.int64)
    for i in range(m):
        fwd = nbr[:, 2 * i]
        (rows,) = np.nonzero(fwd >= 0)
        for s in range(0, rows.size, _CHUNK):
            idx = rows[s : s + _CHUNK]
            match[idx, i, :] = _best_perms(values[idx], values[fwd[idx]], perms, kind)
    return match


def matched_costs(values, nbr, match, kind):
    """Squared edge cost per (node, axis) under the stored pairing."""
    n, Q, _ = values.shape
    m = nbr.shape[1] // 2
    out = np.zeros((n, m))
    for i in range(m):
        fwd = nbr[:, 2 * i]
        (rows,) = np.nonzero(fwd >= 0)
        w = values[fwd[rows]]
        sigma = match[rows, i, :]
        wm = w[np.arange(rows.size)[:, None], sigma, :]
        d = _rep_diff(wm - values[rows], kind)
        out[rows, i] = np.einsum("kqn,kqn->k", d, d)
    return out


def moment_fields(values, nbr, match, kind, h):
    """Per-node directional Gram matrices M_ij = sum_l <D_i u_l, D_j u_l>.

    Forward differences with the stored sheet pairing; axes without a
    forward neighbor contribute zero rows/columns.
    """
    n, Q, N = values.shape
    m = nbr.shape[1] // 2
    M = np.zeros((n, m, m))
    for s in range(0, n, _CHUNK):
        sl = slice(s, min(n, s + _CHUNK))
        k = sl.stop - sl.start
        derivs = np.zeros((k, m, Q, N))
        for i in range(m):
            fwd = nbr[sl, 2 * i]
            ok = fwd >= 0
            rows = np.nonzero(ok)[0]
            if rows.size == 0:
                continue
            w = values[fwd[rows]]
            sigma = match[sl, i, :][rows]
            wm = w[np.arange(rows.size)[:, None], sigma, :]
            derivs[rows, i] = _rep_diff(wm - values[sl][rows], kind) / h
        M[sl] = np.einsum("kiqn,kjqn->kij", derivs, derivs)
    return M


def sheet_derivatives(values, nbr, match, kind, h):
    """Forward-difference sheet derivatives, shape (n, m, Q, N)."""
    n, Q, N = values.shape
    m = nbr.shape[1] // 2
    derivs = np.zeros((n, m, Q, N))
    for i in range(m):
        fwd = nbr[:, 2 * i]
        (rows,) = np.nonzero(fwd >= 0)
        w = values[fwd[rows]]
        sigma = match[rows, i, :]
        wm = w[np.arange(rows.size)[:, None], sigma, :]
        derivs[rows, i] = _rep_diff(wm - values[rows], kind) / h
    return derivs


def _project_rows(vals, old, kind):
    if kind == 1:
        norms = np.linalg.norm(vals, axis=-1, keepdims=True)
        safe = norms > 1e-12
        np.divide(vals, norms, out=vals, where=safe)
        # a (near-)vanishing average has no well-defined projection: keep
        # the previous on-sphere value, which never breaks descent
        bad = ~safe[..., 0]
        vals[bad] = old[bad]
    elif kind == 2:
        np.mod(vals, 1.0, out=vals)
    return vals


def sweep_color(values, nbr, match, perms, parity, interior, color, kind):
    """One half-sweep: update every interior node of the given parity.

    Each node moves to the projected average of its matched neighbor sheets
    (shortest representatives on the torus), then the pairings on all its
    incident edges are re-optimized.  Neighbors of the opposite parity stay
    frozen during the half-sweep, so the update order does not matter.
    """
    n, Q, N = values.shape
    m = nbr.shape[1] // 2
    (V,) = np.nonzero((parity == color) & interior)
    if V.size == 0:
        return
    k = V.size
    vvals = values[V]  # (k, Q, N)
    acc = np.zeros((k, Q, N))
    cnt = np.zeros((k, 1, 1))
    ar = np.arange(k)[:, None]
    for i in range(m):
        for back in (False, True):
            nb = nbr[V, 2 * i + (1 if back else 0)]
            ok = nb >= 0
            if not np.any(ok):
                continue
            rows = np.nonzero(ok)[0]
            w = values[nb[rows]]
            if back:
                # stored pairing lives on the neighbor's forward edge
                tau = match[nb[rows], i, :]
                sigma = np.argsort(tau, axis=1)  # inverse permutation
            else:
                sigma = match[V[rows], i, :]
            wm = w[np.arange(rows.size)[:, None], sigma, :]
            acc[rows] += _rep_diff(wm - vvals[rows], kind)
            cnt[rows] += 1.0
    has = cnt[:, 0, 0] > 0
    newv = vvals.copy()
    newv[has] += acc[has] / cnt[has]
    _project_rows(newv, vvals, kind)
    values[V] = newv
    # re-optimize pairings on all incident edges (owned by the updater)
    for i in range(m):
        fwd = nbr[V, 2 * i]
        rows = np.nonzero(fwd >= 0)[0]
        if rows.size:
            match[V[rows], i, :] = _best_perms(values[V[rows]], values[fwd[rows]], perms, kind)
        bwd = nbr[V, 2 * i + 1]
        rows = np.nonzero(bwd >= 0)[0]
        if rows.size:
            match[bwd[rows], i, :] = _best_perms(values[bwd[rows]], values[V[rows]], perms, kind)
