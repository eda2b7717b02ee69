"""Energy minimization by matched local relaxation, plus stationarity checks.

Each sweep visits the interior nodes in red-black order.  A node update
replaces its Q-point by the projected average of the matched neighbor
sheets, which is the exact minimizer of the local matched edge-cost sum on
all three targets (projection of the mean realizes the constrained minimum
on the sphere; shortest chart representatives make it exact on the torus).
Incident pairings are re-optimized immediately, so every step is an
explicit minimization and the total energy never increases.

Periodically (``shuffle_cadence``) all pairings are re-optimized globally
and a seeded fraction of nodes receives transposition proposals: the node
is re-averaged under a transposed pairing on one incident edge and the move
is kept only when the local matched cost strictly decreases.  This escapes
pairing-induced local minima without breaking monotone descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import targets as T
from .errors import DomainError, NumericFailure
from .lattice import QField


@dataclass
class SweepConfig:
    max_sweeps: int = 100_000
    tol: float = 1e-8
    shuffle_cadence: int = 10
    shuffle_prob: float = 0.05
    seed: int = 0

    def to_dict(self):
        return {
            "max_sweeps": self.max_sweeps,
            "tol": self.tol,
            "shuffle_cadence": self.shuffle_cadence,
            "shuffle_prob": self.shuffle_prob,
            "seed": self.seed,
        }


@dataclass
class ConvergenceReport:
    final_energy: float
    sweeps: int
    converged: bool
    stop_reason: str
    shuffle_accepts: int
    energy_history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "final_energy": self.final_energy,
            "sweeps": self.sweeps,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "shuffle_accepts": self.shuffle_accepts,
        }


from ._kernels import numpy_backend as _nb


def _total_energy(u: QField) -> float:
    return float(u.edge_costs().sum()) * u.domain.h ** (u.domain.m - 2)


def _independent_subset(nbr, picked):
    """Greedy thinning so no two kept nodes share a lattice edge."""
    kept = []
    kept_set = set()
    for v in picked:
        if not any(int(w) in kept_set for w in nbr[v] if w >= 0):
            kept.append(int(v))
            kept_set.add(int(v))
    return np.array(kept, dtype=np.int64)


def _refresh_incident(u: QField, V, perms):
    """Re-optimize pairings on all edges touching the nodes V; return the
    summed matched cost per node."""
    vals, nbr, kind = u.values, u.domain.nbr, u.target.kind
    total = np.zeros(V.size)
    for i in range(u.domain.m):
        for back in (0, 1):
            other = nbr[V, 2 * i + back]
            rows = np.nonzero(other >= 0)[0]
            if rows.size == 0:
                continue
            if back == 0:
                a_idx, b_idx = V[rows], other[rows]
            else:
                a_idx, b_idx = other[rows], V[rows]
            sig = _nb._best_perms(vals[a_idx], vals[b_idx], perms, kind)
            u.matchings[a_idx, i, :] = sig
            wm = vals[b_idx][np.arange(rows.size)[:, None], sig, :]
            d = wm - vals[a_idx]
            if kind == T.TORUS2:
                d -= np.round(d)
            total[rows] += np.einsum("kqn,kqn->k", d, d)
    return total


def _matched_averages(u: QField, V, override=None):
    """Projected matched-neighbor averages for the nodes V (vectorized).

    ``override = (axes, backs, sigmas)`` substitutes one incident pairing
    per node, used to probe transposition proposals.
    """
    vals, nbr, kind = u.values, u.domain.nbr, u.target.kind
    k, Q, N = V.size, u.Q, u.N
    acc = np.zeros((k, Q, N))
    cnt = np.zeros((k, 1, 1))
    vvals = vals[V]
    for i in range(u.domain.m):
        for back in (0, 1):
            other = nbr[V, 2 * i + back]
            rows = np.nonzero(other >= 0)[0]
            if rows.size == 0:
                continue
            if back == 0:
                sigma = u.matchings[V[rows], i, :]
            else:
                sigma = np.argsort(u.matchings[other[rows], i, :], axis=1)
            if override is not None:
                axes, backs, sigmas = override
                hit = np.nonzero((axes[rows] == i) & (backs[rows] == back))[0]
                sigma = sigma.copy()
                sigma[hit] = sigmas[rows[hit]]
            w = vals[other[rows]]
            wm = w[np.arange(rows.size)[:, None], sigma, :]
            d = wm - vvals[rows]
            if kind == T.TORUS2:
                d -= np.round(d)
            acc[rows] += d
            cnt[rows] += 1.0
    has = cnt[:, 0, 0] > 0
    cand = vvals.copy()
    cand[has] += acc[has] / cnt[has]
    if kind == T.SPHERE:
        nrm = np.linalg.norm(cand, axis=-1, keepdims=True)
        ok = nrm[..., 0] > 1e-12
        cand[ok] = cand[ok] / nrm[ok]
        cand[~ok] = vvals[~ok]
    elif kind == T.TORUS2:
        cand %= 1.0
    return cand


def _shuffle_proposals(u: QField, perms, rng, prob: float) -> int:
    """Seeded sheet-transposition proposals, kept only on strict local gain.

    Candidates are re-averaged under a transposed pairing on one random
    incident edge.  The picked set is thinned to pairwise non-adjacent
    nodes so local cost comparisons are exact and order-free, keeping the
    global energy monotone.
    """
    if u.Q < 2 or prob <= 0:
        return 0
    dom = u.domain
    interior = np.nonzero(dom.interior)[0]
    picked = interior[rng.random(interior.size) < prob]
    axes_all = rng.integers(dom.m, size=picked.size)
    backs_all = rng.integers(2, size=picked.size)
    l1 = rng.integers(u.Q, size=picked.size)
    l2 = (l1 + 1 + rng.integers(u.Q - 1, size=picked.size)) % u.Q
    keep = _independent_subset(dom.nbr, picked)
    if keep.size == 0:
        return 0
    sel = np.searchsorted(picked, keep)
    V, axes, backs = keep, axes_all[sel], backs_all[sel]
    l1, l2 = l1[sel], l2[sel]
    has_edge = dom.nbr[V, 2 * axes + backs] >= 0
    V, axes, backs, l1, l2 = V[has_edge], axes[has_edge], backs[has_edge], l1[has_edge], l2[has_edge]
    if V.size == 0:
        return 0

    before = _refresh_incident(u, V, perms)
    # transposed pairing on the chosen edge of each node
    base = np.empty((V.size, u.Q), dtype=np.int64)
    fwd_rows = backs == 0
    base[fwd_rows] = u.matchings[V[fwd_rows], axes[fwd_rows], :]
    bwd_rows = ~fwd_rows
    base[bwd_rows] = np.argsort(
        u.matchings[dom.nbr[V[bwd_rows], 2 * axes[bwd_rows] + 1], axes[bwd_rows], :], axis=1
    )
    sigmas = base.copy()
    ar = np.arange(V.size)
    sigmas[ar, l1], sigmas[ar, l2] = base[ar, l2], base[ar, l1]

    old_vals = u.values[V].copy()
    cand = _matched_averages(u, V, override=(axes, backs, sigmas))
    u.values[V] = cand
    after = _refresh_incident(u, V, perms)
    reject = after >= before - 1e-15 * np.maximum(1.0, before)
    if reject.any():
        u.values[V[reject]] = old_vals[reject]
        _refresh_incident(u, V[reject], perms)
    return int((~reject).sum())


def relax(u: QField, config: SweepConfig | None = None):
    """Minimize the discrete energy with frozen boundary values.

    Returns ``(field, report)``.  The energy history is non-increasing; the
    iteration stops on relative per-sweep decrease below ``tol``, on the
    sweep budget, or when rounding noise would produce an uptick (in which
    case the previous state is kept).
    """
    config = config or SweepConfig()
    u = u.copy()
    perms = K.perm_table(u.Q)
    rng = np.random.default_rng(config.seed)
    dom = u.domain

    energy = _total_energy(u)
    if not np.isfinite(energy):
        raise NumericFailure("initial energy is not finite", sweep=0)
    history = [energy]
    accepts = 0
    converged = False
    reason = "max_sweeps"
    sweeps_done = 0

    for sweep in range(1, config.max_sweeps + 1):
        prev_vals = u.values.copy()
        prev_match = u.matchings.copy()
        for color in (0, 1):
            K.sweep_color(
                u.values, dom.nbr, u.matchings, perms, dom.parity, dom.interior, color, u.target.kind
            )
        if config.shuffle_cadence and sweep % config.shuffle_cadence == 0:
            u.refresh_matchings()
            accepts += _shuffle_proposals(u, perms, rng, config.shuffle_prob)
        new_energy = _total_energy(u)
        if not np.isfinite(new_energy):
            raise NumericFailure("energy became non-finite", sweep=sweep)
        if new_energy > energy:
            # descent holds in exact arithmetic; an uptick is rounding noise,
            # so keep the previous state and stop honestly
            u.values, u.matchings = prev_vals, prev_match
            converged, reason = True, "float_stagnation"
            sweeps_done = sweep
            break
        sweeps_done = sweep
        drop = energy - new_energy
        energy = new_energy
        history.append(energy)
        if drop <= config.tol * max(energy, 1e-300):
            converged, reason = True, "tol"
            break

    report = ConvergenceReport(
        final_energy=energy,
        sweeps=sweeps_done,
        converged=converged,
        stop_reason=reason,
        shuffle_accepts=accepts,
        energy_history=history,
    )
    return u, report


# ---------------------------------------------------------------------------
# stationarity residuals


def _batch_eval(fn, *arrays, out_shape):
    try:
        out = np.asarray(fn(*arrays), dtype=float)
        assert out.shape == out_shape
        return out
    except Exception:
        k = arrays[0].shape[0]
        return np.stack([np.asarray(fn(*(a[i] for a in arrays)), dtype=float) for i in range(k)])


def _check_interior_support(u: QField, samples: np.ndarray, what: str):
    bmask = ~u.domain.interior
    if samples[bmask].size and np.max(np.abs(samples[bmask])) > 1e-12:
        raise DomainError(f"{what} must vanish on boundary nodes")


def inner_variation_residual(u: QField, X, DX=None) -> float:
    """Discrete inner-variation integral for the domain vector field X.

    ``X(x) -> (m,)`` must vanish on the boundary nodes; ``DX(x) -> (m, m)``
    with entries ``DX[i, j] = D_i X^j`` is differenced on the lattice when
    not supplied.  For converged minimizers the magnitude decays under
    refinement.
    """
    dom = u.domain
    pos = dom.positions
    Xs = _batch_eval(X, pos, out_shape=(dom.n_nodes, dom.m))
    _check_interior_support(u, Xs, "inner-variation field X")

    if DX is not None:
        DXs = _batch_eval(DX, pos, out_shape=(dom.n_nodes, dom.m, dom.m))
    else:
        DXs = np.zeros((dom.n_nodes, dom.m, dom.m))
        for i in range(dom.m):
            fwd, bwd = dom.nbr[:, 2 * i], dom.nbr[:, 2 * i + 1]
            ok = (fwd >= 0) & (bwd >= 0)
            DXs[ok, i, :] = (Xs[fwd[ok]] - Xs[bwd[ok]]) / (2 * dom.h)

    M = u.moments()
    rho = np.einsum("vii->v", M)
    integrand = rho * np.einsum("vii->v", DXs) - 2.0 * np.einsum("vij,vij->v", M, DXs)
    return float(integrand.sum() * dom.h**dom.m)


def _tangent_project(target, p, Y):
    if target.kind == T.SPHERE:
        return Y - np.einsum("kn,kn->k", Y, p)[:, None] * p
    return Y


def outer_variation_residual(u: QField, Y) -> float:
    """Discrete outer-variation integral for the target vector field Y.

    ``Y(x, p) -> (N,)`` is tangent-projected per target and must vanish at
    boundary nodes.  Flat targets contribute no curvature term; on the
    sphere the second fundamental form term is included.
    """
    dom = u.domain
    n, Q, N = u.values.shape
    pos = np.repeat(dom.positions, Q, axis=0)
    pts = u.values.reshape(n * Q, N)
    Yv = _batch_eval(Y, pos, pts, out_shape=(n * Q, N))
    Yv = _tangent_project(u.target, pts, Yv).reshape(n, Q, N)
    _check_interior_support(u, Yv, "outer-variation field Y")

    derivs = u.sheet_derivatives()  # (n, m, Q, N)
    h = dom.h
    total = 0.0
    for i in range(dom.m):
        fwd = dom.nbr[:, 2 * i]
        (rows,) = np.nonzero(fwd >= 0)
        sigma = u.matchings[rows, i, :]
        wpts = u.values[fwd[rows]][np.arange(rows.size)[:, None], sigma, :]
        wpos = np.repeat(dom.positions[fwd[rows]], Q, axis=0)
        Yw = _batch_eval(Y, wpos, wpts.reshape(-1, N), out_shape=(rows.size * Q, N))
        Yw = _tangent_project(u.target, wpts.reshape(-1, N), Yw).reshape(rows.size, Q, N)
        dY = (Yw - Yv[rows]) / h
        total += float(np.einsum("kqn,kqn->", derivs[rows, i], dY))

    if u.target.kind == T.SPHERE:
        # <A_p(w, w), Y> = -|w|^2 <p, Y> on the unit sphere
        sq = np.einsum("vmqn,vmqn->vq", derivs, derivs)
        total -= float(np.einsum("vq,vq->", sq, np.einsum("vqn,vqn->vq", u.values, Yv)))

    return total * h**dom.m
