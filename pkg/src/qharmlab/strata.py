"""Quantitative symmetry, strata extraction, spanning, covering, Minkowski.

A ball B_r(x) is called (k, eps)-symmetric for a field when its two-scale
energy gap theta(x, 2r) - theta(x, r) is below eps and some k-dimensional
direction subspace carries at most eps of the (normalized) energy.  The
best subspace is found exactly: the energy of directions in a subspace V is
trace of the directional Gram matrix restricted to V, so its infimum over
k-dimensional V is the sum of the k smallest eigenvalues.

The covering builder follows the good/bad ball refinement: high-energy
point sets that effectively span k directions are refined, sets pinned near
a (k-1)-plane are kept as leaves, and the k-th power packing sum of the
leaves is reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree

from .errors import DepthCapError, DimensionMismatchError, DomainError, PreconditionError, UnderResolvedError
from .lattice import QField, directional_energy_matrix
from .monotone import Kernel, pinch, theta, theta_map

# ---------------------------------------------------------------------------
# symmetry reports


@dataclass
class SymmetryReport:
    center: np.ndarray
    radius: float
    pinch: float
    eigenvalues: np.ndarray  # ascending, of r^(2-m) * directional Gram matrix
    basis: np.ndarray  # eigenvectors as columns, matching order
    partial_stencil: bool

    def best_plane_energy(self, k: int) -> float:
        """Exact infimum over k-dim subspaces of the normalized direction energy."""
        if not 0 <= k <= self.eigenvalues.size:
            raise DimensionMismatchError(f"k={k} out of range")
        return float(self.eigenvalues[:k].sum())

    def best_plane_basis(self, k: int) -> np.ndarray:
        return self.basis[:, :k]

    def is_symmetric(self, k: int, eps: float) -> bool:
        return self.pinch < eps and self.best_plane_energy(k) <= eps


def symmetry_report(u: QField, kernel: Kernel, x, r, density=None) -> SymmetryReport:
    """Pinch and direction-energy eigenstructure of B_r(x) (needs B_2r inside)."""
    gap = theta(u, kernel, x, 2 * r, density) - theta(u, kernel, x, r, density)
    M = directional_energy_matrix(u, x, r)
    scaled = r ** (2 - u.domain.m) * M.matrix
    lam, vec = np.linalg.eigh(scaled)
    return SymmetryReport(
        center=np.asarray(x, dtype=float),
        radius=float(r),
        pinch=float(gap),
        eigenvalues=lam,
        basis=vec,
        partial_stencil=M.partial_stencil,
    )


# ---------------------------------------------------------------------------
# whole-grid scale maps (FFT convolutions on the regular grid)


def _ball_stencil(dom, r):
    half = int(np.floor(r / dom.h + 1e-12))
    offs = np.meshgrid(*([np.arange(-half, half + 1) * dom.h] * dom.m), indexing="ij")
    dist2 = sum(o**2 for o in offs)
    return (dist2 <= r**2 + 1e-12).astype(float)


def moment_maps(u: QField, r, moments=None):
    """Integrated directional Gram matrix over B_r(x) for every node x.

    Returns ``(M, valid)`` with M of shape (n, m, m); matches
    :func:`qharmlab.lattice.directional_energy_matrix` up to rounding.
    """
    dom = u.domain
    if moments is None:
        moments = u.moments()
    stencil = _ball_stencil(dom, r)
    out = np.zeros((dom.n_nodes, dom.m, dom.m))
    grid = np.zeros(int(np.prod(dom.shape)))
    for i in range(dom.m):
        for j in range(i, dom.m):
            grid[:] = 0.0
            grid[dom.node_grid] = moments[:, i, j]
            conv = fftconvolve(grid.reshape(dom.shape), stencil, mode="same")
            vals = conv.reshape(-1)[dom.node_grid] * dom.h**dom.m
            out[:, i, j] = vals
            out[:, j, i] = vals
    valid = dom.boundary_distances() >= r - 1e-12
    return out, valid


def symmetric_ball_map(u: QField, kernel: Kernel, s, k: int, eps: float, density=None, moments=None):
    """Node mask of (k, eps)-symmetric balls B_s(x), plus validity mask."""
    dom = u.domain
    th_s, valid_s = theta_map(u, kernel, s, density)
    th_2s, valid_2s = theta_map(u, kernel, 2 * s, density)
    gap = th_2s - th_s
    M, valid_M = moment_maps(u, s, moments)
    lam = np.linalg.eigvalsh(s ** (2 - dom.m) * M)
    best_k = lam[:, :k].sum(axis=1) if k > 0 else np.zeros(dom.n_nodes)
    valid = valid_s & valid_2s & valid_M
    return (gap < eps) & (best_k <= eps) & valid, valid


@dataclass
class StratumSpec:
    """Nodes admitting no (k+1, eps)-symmetric ball at any tested scale."""

    k: int
    eps: float
    r_min: float
    scales: list
    flags: np.ndarray  # (n,) bool
    tested: np.ndarray  # (n,) bool: at least one scale was testable

    def node_indices(self) -> np.ndarray:
        return np.nonzero(self.flags)[0]

    def is_nested_in(self, other: "StratumSpec") -> bool:
        """Set inclusion check for the monotone nesting of strata."""
        return bool(np.all(other.flags[self.flags]))


def dyadic_scales(r_min: float, r_max: float):
    scales = []
    s = r_min
    while s <= r_max * (1 + 1e-12):
        scales.append(s)
        s *= 2
    return scales


def extract_stratum(
    u: QField,
    kernel: Kernel,
    k: int,
    eps: float,
    r_min: float,
    r_max: float | None = None,
    density=None,
    moments=None,
) -> StratumSpec:
    """Quantitative stratum at the tested dyadic scale ladder.

    A node joins the stratum when none of its testable balls B_s(x),
    r_min <= s < min(r_max, 1), is (k+1, eps)-symmetric.  Scales whose ball
    leaves the domain are skipped (they cannot certify symmetry); nodes
    with no testable scale at all are left unflagged.
    """
    dom = u.domain
    if r_min < 2 * dom.h:
        raise UnderResolvedError(f"stratum ladder floor {r_min} below 2h = {2 * dom.h}")
    if r_max is None:
        r_max = min(1.0, float(np.max(dom.boundary_distances())) / 2)
    if density is None:
        density = u.energy_density()
    if moments is None:
        moments = u.moments()
    scales = dyadic_scales(r_min, r_max)
    if not scales:
        raise DomainError(f"no dyadic scales in [{r_min}, {r_max}]")

    some_symmetric = np.zeros(dom.n_nodes, dtype=bool)
    some_tested = np.zeros(dom.n_nodes, dtype=bool)
    for s in scales:
        sym, valid = symmetric_ball_map(u, kernel, s, k + 1, eps, density, moments)
        some_symmetric |= sym
        some_tested |= valid
    flags = some_tested & ~some_symmetric
    return StratumSpec(k, eps, r_min, scales, flags, some_tested)


def singular_proxy(
    u: QField, kernel: Kernel, eps0: float, r_min: float, r_max: float | None = None, density=None
) -> np.ndarray:
    """Continuity-obstruction proxy: nodes with theta(x, r) >= eps0 at every
    tested dyadic scale down to r_min.

    Only nodes whose whole ladder stays inside the domain are flagged, so a
    non-empty result is automatically compactly interior.
    """
    dom = u.domain
    if r_min < 2 * dom.h:
        raise UnderResolvedError(f"proxy ladder floor {r_min} below 2h = {2 * dom.h}")
    if r_max is None:
        r_max = min(1.0, float(np.max(dom.boundary_distances())) / 2)
    if density is None:
        density = u.energy_density()
    flags = np.ones(dom.n_nodes, dtype=bool)
    for s in dyadic_scales(r_min, r_max):
        vals, valid = theta_map(u, kernel, s, density)
        flags &= valid & (vals >= eps0)
    return np.nonzero(flags)[0]


# ---------------------------------------------------------------------------
# effective spanning


def _residuals(points, base, basis):
    d = points - base
    if basis:
        B = np.stack(basis, axis=1)  # (m, j)
        d = d - (d @ B) @ B.T
    return np.linalg.norm(d, axis=1)


def effective_spanning(points, rho: float, k: int):
    """Exact decision: do k+1 of the points form a chain where each one is
    at distance >= 2*rho from the affine span of its predecessors?

    Depth-first search over candidate chains, extending by the farthest
    candidate first; exhaustive, so a False answer certifies that no
    ordered witness chain exists among the inputs.  Returns
    ``(decision, witnesses)`` with the chain as a (k+1, m) array or None.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise DimensionMismatchError("points must be (P, m)")
    P, m = pts.shape
    if k > m:
        raise DimensionMismatchError(f"k={k} exceeds ambient dimension {m}")
    if P == 0:
        return False, None
    if k == 0:
        return True, pts[:1].copy()
    thresh = 2.0 * rho

    def extend(chain_idx, basis):
        if len(chain_idx) == k + 1:
            return list(chain_idx)
        res = _residuals(pts, pts[chain_idx[0]], basis)
        cand = np.nonzero(res >= thresh)[0]
        for c in cand[np.argsort(-res[cand])]:
            d = pts[c] - pts[chain_idx[0]]
            if basis:
                B = np.stack(basis, axis=1)
                d = d - B @ (B.T @ d)
            nd = np.linalg.norm(d)
            got = extend(chain_idx + [int(c)], basis + [d / nd])
            if got is not None:
                return got
        return None

    for y0 in range(P):
        got = extend([y0], [])
        if got is not None:
            return True, pts[got].copy()
    return False, None


def greedy_spanning(points, threshold: float, k: int):
    """Farthest-first chain growth with an explicit failure certificate.

    Returns ``(witnesses, plane)``: either a (k+1)-chain whose steps all
    clear ``threshold`` (plane is None), or ``(None, (base, basis))`` where
    every input point lies within ``threshold`` of the affine plane spanned
    by the partial chain, whose dimension is then at most k-1.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] == 0:
        return None, (None, np.zeros((0, 0)))
    chain = [int(np.argmin(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))]
    basis = []
    while len(chain) < k + 1:
        res = _residuals(pts, pts[chain[0]], basis)
        c = int(np.argmax(res))
        if res[c] < threshold:
            B = np.stack(basis, axis=1) if basis else np.zeros((pts.shape[1], 0))
            return None, (pts[chain[0]].copy(), B)
        d = pts[c] - pts[chain[0]]
        if basis:
            B = np.stack(basis, axis=1)
            d = d - B @ (B.T @ d)
        basis.append(d / np.linalg.norm(d))
        chain.append(c)
    return pts[chain].copy(), None


# ---------------------------------------------------------------------------
# pinching control


def pinching_control_check(u: QField, kernel: Kernel, witnesses, r: float, rho: float, x=None):
    """Check that plane-direction energy is controlled by witness pinching.

    ``witnesses`` are k+1 points that must (rho*r)-effectively span their
    affine plane L.  The left side is the normalized energy along L plus
    the energy along the gradient of dist^2(., L)/2 over B_r(x); the right
    side bounds it through the two-scale gaps theta(y_i, 4r) - theta(y_i, 2r)
    with a constant assembled from the actual witness geometry:

        |Du.e|^2 <= (sum_j |c_j|) sum_j |c_j| |Du.(z - y_j)|^2

    for any direction written as e = sum_j c_j y_j with sum c_j = 0 (and
    the analogous affine combination for the foot-point field), followed by
    P_u(y, 2r) <= 2^(m-1)/c_psi * [theta(y, 4r) - theta(y, 2r)].

    Returns a report with both sides and their ratio (expected <= 1).
    """
    ws = np.asarray(witnesses, dtype=float)
    kplus1, m = ws.shape
    k = kplus1 - 1
    ok, _ = effective_spanning(ws, rho * r, k)
    if not ok:
        raise PreconditionError("witnesses do not (rho*r)-effectively span a k-plane")
    x = ws.mean(axis=0) if x is None else np.asarray(x, dtype=float)

    # orthonormal basis of the linear part of L
    diffs = (ws[1:] - ws[0]).T  # (m, k)
    Bhat, _ = np.linalg.qr(diffs) if k > 0 else (np.zeros((m, 0)), None)

    moments = u.moments()
    idx = u.domain.nodes_in_ball(x, r)
    Msum = moments[idx]
    pos = u.domain.positions[idx]
    hm = u.domain.h ** u.domain.m

    left = 0.0
    if k > 0:
        for j in range(k):
            e = Bhat[:, j]
            left += r**2 * float(np.einsum("i,kij,j->", e, Msum, e)) * hm
    # v(z) = z - projection of z onto L
    dz = pos - ws[0]
    v = dz - (dz @ Bhat) @ Bhat.T
    left += float(np.einsum("ki,kij,kj->", v, Msum, v)) * hm
    left *= r ** (-u.domain.m)

    c_rad = 2 ** (m - 1) / kernel.psi_drop_constant(m)
    coeff = np.zeros(kplus1)
    A = np.vstack([ws.T, np.ones(kplus1)])  # (m+1, k+1)
    if k > 0:
        # direction coefficients: e = sum_j c_j y_j with sum c_j = 0
        for j in range(k):
            rhs = np.concatenate([r * Bhat[:, j], [0.0]])
            c, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            coeff += (2**m * c_rad) * np.sum(np.abs(c)) * np.abs(c)
    # foot-point coefficients: pi_L(z) = sum_j g_j(z) y_j, sum g_j = 1, affine in z;
    # bound each |g_j| over B_r(x) by |g_j(x)| + r |grad g_j|
    def gammas(z):
        piz = ws[0] + Bhat @ (Bhat.T @ (z - ws[0]))
        g, *_ = np.linalg.lstsq(A, np.concatenate([piz, [1.0]]), rcond=None)
        return g

    g0 = gammas(x)
    grad = np.stack([(gammas(x + r * np.eye(m)[a]) - g0) / r for a in range(m)], axis=0)  # (m, k+1)
    gmax = np.abs(g0) + r * np.linalg.norm(grad, axis=0)
    coeff += (2**m * c_rad) * np.sum(gmax) * gmax

    gaps = np.array([theta(u, kernel, w, 4 * r) - theta(u, kernel, w, 2 * r) for w in ws])
    right = float(np.dot(coeff, np.maximum(gaps, 0.0)))
    ratio = left / right if right > 0 else (0.0 if left <= 1e-14 else np.inf)
    return {
        "left": left,
        "right": right,
        "ratio": ratio,
        "constant_per_witness": coeff.tolist(),
        "gaps": gaps.tolist(),
    }


# ---------------------------------------------------------------------------
# comparison model map


def cn_model_distance(u: QField, x, r, plane_basis, t=None, n_slices: int = 5) -> float:
    """Mean squared multiset distance to the best homogeneous plane-invariant model.

    The model is built from one transverse slice of the field: writing
    points near x as x + (y, z) with y along the plane and z across it, a
    slice position y0 is chosen to minimize the sampled sum of

    * the squared multiset distance between u(y, z) and the slice u(y0, z)
      (plane invariance defect), and
    * the squared multiset distance between u(y0, z) and u(y0, t z/|z|)
      (homogeneity defect of the slice),

    and the model h(y, z) = u(x + y0 + t z/|z|) is compared with the field
    over the nodes of B_{r/4}(x).
    """
    from . import targets as T
    from .qspace import QPoint, g_distance

    dom = u.domain
    x = np.asarray(x, dtype=float)
    B = np.asarray(plane_basis, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    k = B.shape[1]
    m = dom.m
    t = (r / 2) if t is None else t
    if t < 4 * dom.h:
        raise UnderResolvedError(f"slice scale {t} below 4h = {4 * dom.h}")
    # orthonormal frames along and across the plane
    Bq, _ = np.linalg.qr(B)
    w, vec = np.linalg.eigh(np.eye(m) - Bq @ Bq.T)
    Bp = vec[:, w > 0.5]  # (m, m-k)
    mk = m - k

    metric = T.metric_fn(u.target)
    tree = dom.tree()

    def value_at(q):
        return u.values[int(tree.query(q)[1])]

    # sample grids: plane positions, transverse directions and radii
    if k == 0:
        cands = [np.zeros(0)]
        ys = [np.zeros(0)]
    else:
        axes = [np.linspace(-t / 2, t / 2, n_slices)] * k
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        cands = [np.array(c) for c in grid]
        ys = cands
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((12, mk))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.linspace(2 * dom.h, t, 6)

    def along(y):
        return Bq @ y if k else 0.0

    def slice_cost(y0):
        invariance = 0.0
        homogeneity = 0.0
        for d in dirs:
            for s in radii:
                z = Bp @ (s * d)
                v0 = QPoint(value_at(x + along(y0) + z))
                for y in ys[:: max(1, len(ys) // 4)]:
                    invariance += g_distance(QPoint(value_at(x + along(y) + z)), v0, metric) ** 2
                ray = QPoint(value_at(x + along(y0) + Bp @ (t * d)))
                homogeneity += g_distance(v0, ray, metric) ** 2
        return invariance + homogeneity

    best = min(cands, key=slice_cost)

    idx = dom.nodes_in_ball(x, r / 4)
    total = 0.0
    fallback = Bp.T @ np.eye(m)[0]
    for v in idx:
        z = Bp.T @ (dom.positions[v] - x)
        nz = np.linalg.norm(z)
        zdir = z / nz if nz > 1e-12 else fallback / np.linalg.norm(fallback)
        q = x + along(best) + Bp @ (t * zdir)
        total += g_distance(QPoint(u.values[v]), QPoint(value_at(q)), metric) ** 2
    return total / max(1, idx.size)


# ---------------------------------------------------------------------------
# covering construction


@dataclass
class CoveringNode:
    center: np.ndarray
    radius: float
    label: str  # good / bad / final
    witnesses: np.ndarray | None = None
    energy_sup: float = 0.0
    children: list = field(default_factory=list)

    def leaves(self):
        if not self.children:
            yield self
        else:
            for c in self.children:
                yield from c.leaves()


@dataclass
class CoveringResult:
    root: CoveringNode
    k: int
    packing_sum: float
    n_leaves: int
    energy_sup: float

    def leaf_rows(self):
        for leaf in self.root.leaves():
            yield (*leaf.center, leaf.radius, leaf.label)


def _separated_net(points, sep):
    """Greedy maximal subset with pairwise distances >= sep (deterministic)."""
    picked = []
    for i in range(points.shape[0]):
        p = points[i]
        if all(np.linalg.norm(p - points[j]) >= sep for j in picked):
            picked.append(i)
    return np.array(picked, dtype=int)


def build_covering(
    u: QField,
    kernel: Kernel,
    region,
    k: int,
    eps: float,
    rho: float,
    delta: float,
    r_floor: float,
    flags=None,
    depth_cap: int = 30,
) -> CoveringResult:
    """Good/bad ball refinement over the stratum inside ``region = (p, R)``.

    High-pinch points near each ball are collected into the focus set F; a
    ball is good (refined into 10x smaller children centered on a separated
    net of stratum nodes) when F effectively spans k directions, and a bad
    leaf (kept, F pinned near a (k-1)-plane) otherwise.  Children stop at
    ``r_floor``.  Returns the tree and the k-th power packing sum of its
    leaves; the theta scales are clamped to the resolvable floor 2h.
    """
    p, R = np.asarray(region[0], dtype=float), float(region[1])
    dom = u.domain
    if r_floor < dom.h:
        raise UnderResolvedError("r_floor below the lattice spacing")
    density = u.energy_density()
    if flags is None:
        spec = extract_stratum(u, kernel, k, eps, r_min=max(2 * dom.h, r_floor / 4), density=density)
        flags = spec.flags
    flag_idx = np.nonzero(flags)[0]
    fpos = dom.positions[flag_idx]
    ftree = cKDTree(fpos) if flag_idx.size else None

    bdist = dom.boundary_distances()

    def theta_at(y, s):
        s = max(s, 2 * dom.h)
        s = min(s, 0.99 * dom.dist_to_boundary(y))
        if s < 2 * dom.h:
            return 0.0
        return theta(u, kernel, y, s, density)

    # energy sup over the scope
    scope = fpos[np.linalg.norm(fpos - p, axis=1) <= 2 * R] if flag_idx.size else np.zeros((0, dom.m))
    E = max((theta_at(y, 3 * R) for y in scope), default=0.0)

    def focus_set(x, r_x):
        if ftree is None:
            return np.zeros((0, dom.m))
        near = ftree.query_ball_point(x, 2 * r_x)
        pts = fpos[np.asarray(sorted(near), dtype=int)] if near else np.zeros((0, dom.m))
        if pts.shape[0] == 0:
            return pts
        s = rho * r_x / 20
        keep = [i for i in range(pts.shape[0]) if theta_at(pts[i], s) >= E - delta]
        return pts[keep]

    def process(x, r_x, depth):
        if depth > depth_cap:
            raise DepthCapError(f"covering refinement exceeded depth {depth_cap}")
        node = CoveringNode(center=np.asarray(x, dtype=float), radius=float(r_x), label="final", energy_sup=E)
        if r_x <= r_floor * (1 + 1e-12):
            return node
        F = focus_set(x, r_x)
        witnesses, plane = greedy_spanning(F, rho * r_x / 10, k)
        if witnesses is None:
            node.label = "bad"
            return node
        node.label = "good"
        node.witnesses = witnesses
        r_c = max(r_x / 10, r_floor)
        near = ftree.query_ball_point(x, r_x)
        pts = fpos[np.asarray(sorted(near), dtype=int)] if near else np.zeros((0, dom.m))
        if pts.shape[0] == 0:
            node.label = "bad"
            node.witnesses = None
            return node
        net = _separated_net(pts, 2 * r_c / 5)
        for i in net:
            node.children.append(process(pts[i], r_c, depth + 1))
        return node

    root = process(p, R, 0)
    leaves = list(root.leaves())
    packing = float(sum(leaf.radius**k for leaf in leaves))
    return CoveringResult(root=root, k=k, packing_sum=packing, n_leaves=len(leaves), energy_sup=E)


# ---------------------------------------------------------------------------
# Minkowski content


@dataclass
class VolumeTable:
    radii: list
    volumes: list
    counts: list
    slope: float | None

    def rows(self):
        return list(zip(self.radii, self.volumes, self.counts))


def minkowski_estimate(domain, flagged_nodes, radii) -> VolumeTable:
    """Volume of the r-neighborhoods of the flagged node set, with the
    fitted log-volume vs log-radius slope.

    Counts lattice nodes within distance r of the set times h^m.  An empty
    set yields the zero table (no slope).
    """
    flagged_nodes = np.asarray(flagged_nodes, dtype=int)
    radii = [float(r) for r in radii]
    if flagged_nodes.size == 0:
        return VolumeTable(radii, [0.0] * len(radii), [0] * len(radii), None)
    tree = cKDTree(domain.positions[flagged_nodes])
    dist = tree.query(domain.positions)[0]
    vols, counts = [], []
    for r in radii:
        c = int(np.count_nonzero(dist <= r + 1e-12))
        counts.append(c)
        vols.append(c * domain.h**domain.m)
    ok = [i for i, v in enumerate(vols) if v > 0]
    slope = None
    if len(ok) >= 2:
        lr = np.log([radii[i] for i in ok])
        lv = np.log([vols[i] for i in ok])
        slope = float(np.polyfit(lr, lv, 1)[0])
    return VolumeTable(radii, vols, counts, slope)
