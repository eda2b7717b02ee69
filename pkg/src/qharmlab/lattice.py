"""Lattice discretization of multivalued maps and their Dirichlet energy.

A :class:`LatticeDomain` is a set of grid nodes carved out of a regular
m-dimensional grid (ball or box), split into interior nodes (all 2m axis
neighbors present) and boundary nodes.  A :class:`QField` samples a
Q-valued map on the nodes and carries, per forward axis edge, the optimal
sheet pairing between the two endpoint multisets.  The discrete energy of
an edge is its minimal matched squared cost divided by h^2; the energy of
a region is the edge sum times the cell volume h^m.

Edge convention used consistently by every operation here: an axis edge is
attributed to its base node (the one with the smaller coordinate), and a
region collects the forward edges of the nodes it contains.  This makes
``trace(directional matrix) == unrescaled energy`` an exact identity.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from . import targets as T
from .errors import (
    DimensionMismatchError,
    DomainError,
    EmptyRegionError,
    UnderResolvedError,
)

SNAPSHOT_MAGIC = "qharmlab-field v1"


# ---------------------------------------------------------------------------
# domains


@dataclass
class LatticeDomain:
    """Masked regular grid with spacing ``h``.

    ``positions`` are node coordinates, ``nbr[v, 2i]``/``nbr[v, 2i+1]`` the
    forward/backward axis-``i`` neighbors (``-1`` if absent), ``status`` is
    0 for interior nodes and 1 for boundary ones, ``parity`` the usual
    red-black 2-coloring.
    """

    m: int
    h: float
    origin: np.ndarray
    shape: tuple
    node_grid: np.ndarray  # (n,) flat index into the full grid
    positions: np.ndarray  # (n, m)
    nbr: np.ndarray  # (n, 2m)
    status: np.ndarray  # (n,) uint8
    parity: np.ndarray  # (n,) int8
    ball_center: np.ndarray | None = None
    ball_radius: float | None = None
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)
    _btree: cKDTree | None = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return self.status == 0

    @property
    def boundary(self) -> np.ndarray:
        return self.status == 1

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree

    def nodes_in_ball(self, x, r) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.m,):
            raise DimensionMismatchError(f"center must have dimension {self.m}")
        idx = np.asarray(self.tree().query_ball_point(x, r + 1e-12), dtype=np.int64)
        idx.sort()
        return idx

    def nearest_node(self, x) -> int:
        return int(self.tree().query(np.asarray(x, dtype=float))[1])

    def dist_to_boundary(self, x) -> float:
        """Distance to the nearest boundary node (domain extent proxy)."""
        if self._btree is None:
            bidx = np.nonzero(self.boundary)[0]
            self._btree = cKDTree(self.positions[bidx])
        return float(self._btree.query(np.asarray(x, dtype=float))[0])

    def boundary_distances(self) -> np.ndarray:
        """Per-node distance to the nearest boundary node."""
        if self._btree is None:
            bidx = np.nonzero(self.boundary)[0]
            self._btree = cKDTree(self.positions[bidx])
        return self._btree.query(self.positions)[0]

    def ball_fits(self, x, r) -> bool:
        return self.dist_to_boundary(x) >= r - 1e-12


def _build_domain(m, h, origin, shape, keep_mask, ball_center=None, ball_radius=None):
    full = np.prod(shape)
    grid_to_node = np.full(full, -1, dtype=np.int64)
    node_grid = np.nonzero(keep_mask.reshape(-1))[0]
    grid_to_node[node_grid] = np.arange(node_grid.size)

    multi = np.array(np.unravel_index(node_grid, shape)).T  # (n, m) int
    positions = origin[None, :] + h * multi
    parity = (multi.sum(axis=1) % 2).astype(np.int8)

    n = node_grid.size
    nbr = np.full((n, 2 * m), -1, dtype=np.int64)
    strides = np.empty(m, dtype=np.int64)
    acc = 1
    for i in range(m - 1, -1, -1):
        strides[i] = acc
        acc *= shape[i]
    for i in range(m):
        has_fwd = multi[:, i] + 1 < shape[i]
        nbr[has_fwd, 2 * i] = grid_to_node[node_grid[has_fwd] + strides[i]]
        has_bwd = multi[:, i] - 1 >= 0
        nbr[has_bwd, 2 * i + 1] = grid_to_node[node_grid[has_bwd] - strides[i]]

    status = np.where((nbr >= 0).all(axis=1), 0, 1).astype(np.uint8)
    return LatticeDomain(
        m=m,
        h=float(h),
        origin=origin,
        shape=tuple(int(s) for s in shape),
        node_grid=node_grid,
        positions=positions,
        nbr=nbr,
        status=status,
        parity=parity,
        ball_center=ball_center,
        ball_radius=ball_radius,
    )


def ball_domain(m: int, h: float, radius: float = 1.0, center=None) -> LatticeDomain:
    """Lattice nodes inside the closed ball of the given radius."""
    if h <= 0 or radius <= 0:
        raise DomainError("need h > 0 and radius > 0")
    center = np.zeros(m) if center is None else np.asarray(center, dtype=float)
    half = int(np.floor(radius / h + 1e-9))
    shape = (2 * half + 1,) * m
    origin = center - h * half
    axes = [origin[i] + h * np.arange(shape[i]) for i in range(m)]
    grids = np.meshgrid(*axes, indexing="ij")
    r2 = sum((g - center[i]) ** 2 for i, g in enumerate(grids))
    keep = r2 <= radius**2 + 1e-12
    return _build_domain(m, h, origin, shape, keep, center, float(radius))


def box_domain(m: int, h: float, lo, hi) -> LatticeDomain:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        raise DomainError("box needs hi > lo")
    counts = np.floor((hi - lo) / h + 1e-9).astype(int) + 1
    keep = np.ones(tuple(counts), dtype=bool)
    return _build_domain(m, h, lo, tuple(counts), keep)


# ---------------------------------------------------------------------------
# fields


@dataclass
class QField:
    """Q-valued map sampled on a lattice, with per-edge sheet pairings."""

    domain: LatticeDomain
    target: T.TargetManifold
    values: np.ndarray  # (n, Q, N)
    matchings: np.ndarray | None = None  # (n, m, Q)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != self.domain.n_nodes:
            raise DimensionMismatchError("values must be (n_nodes, Q, N)")
        if v.shape[2] != self.target.ambient_dim:
            raise DimensionMismatchError(
                f"coordinate dimension {v.shape[2]} does not match target {self.target.id}"
            )
        self.values = v
        if self.matchings is None:
            self.refresh_matchings()

    @property
    def Q(self) -> int:
        return self.values.shape[1]

    @property
    def N(self) -> int:
        return self.values.shape[2]

    def copy(self) -> "QField":
        return QField(self.domain, self.target, self.values.copy(), self.matchings.copy())

    def refresh_matchings(self) -> "QField":
        self.matchings = K.all_matchings(
            self.values, self.domain.nbr, K.perm_table(self.Q), self.target.kind
        )
        return self

    def edge_costs(self) -> np.ndarray:
        """Squared matched cost per (node, forward axis edge)."""
        return K.matched_costs(self.values, self.domain.nbr, self.matchings, self.target.kind)

    def energy_density(self) -> np.ndarray:
        """Per-node |Du|^2 from the forward differences based at the node."""
        return self.edge_costs().sum(axis=1) / self.domain.h**2

    def moments(self) -> np.ndarray:
        """Per-node directional Gram matrices, shape (n, m, m)."""
        return K.moment_fields(
            self.values, self.domain.nbr, self.matchings, self.target.kind, self.domain.h
        )

    def sheet_derivatives(self) -> np.ndarray:
        """Forward-difference sheet derivatives, shape (n, m, Q, N)."""
        return K.sheet_derivatives(
            self.values, self.domain.nbr, self.matchings, self.target.kind, self.domain.h
        )

    def on_target_error(self) -> float:
        proj = T.project(self.target, self.values)
        return float(np.max(np.abs(proj - self.values))) if self.values.size else 0.0

    def validate(self, tol: float = 1e-10):
        err = self.on_target_error()
        if err > tol:
            raise DomainError(f"field leaves the target by {err:.3g}")


def constant_field(domain: LatticeDomain, target: T.TargetManifold, point, Q: int) -> QField:
    p = T.project(target, np.asarray(point, dtype=float))
    vals = np.tile(p, (domain.n_nodes, Q, 1))
    return QField(domain, target, vals)


def field_from_function(domain, target, fn, Q: int) -> QField:
    """Sample ``fn(position) -> (Q, N)`` on every node and project."""
    vals = np.empty((domain.n_nodes, Q, target.ambient_dim))
    for v in range(domain.n_nodes):
        vals[v] = fn(domain.positions[v])
    vals = T.project(target, vals)
    return QField(domain, target, vals)


# ---------------------------------------------------------------------------
# energies


def _region_nodes(u: QField, region) -> np.ndarray:
    if region is None:
        return np.arange(u.domain.n_nodes)
    x, r = region
    idx = u.domain.nodes_in_ball(x, r)
    if idx.size == 0:
        raise EmptyRegionError(f"no lattice nodes in the ball B({x}, {r})")
    return idx


def discrete_dirichlet_energy(u: QField, region=None, rescaled: bool = False) -> float:
    """Matched-edge Dirichlet energy of the region (default: whole domain).

    ``rescaled=True`` multiplies by r^(2-m) for ball regions, matching the
    scale-normalized energy used by the local analysis.
    """
    idx = _region_nodes(u, region)
    h = u.domain.h
    e = float(u.edge_costs()[idx].sum()) * h ** (u.domain.m - 2)
    if rescaled:
        if region is None:
            raise DomainError("rescaled energy needs an explicit ball region")
        e *= float(region[1]) ** (2 - u.domain.m)
    return e


@dataclass(frozen=True)
class EnergyMatrix:
    """Directional energy Gram matrix over a ball, M_ij = int <D_i u, D_j u>."""

    matrix: np.ndarray
    center: np.ndarray
    radius: float
    partial_stencil: bool

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def directional_energy(self, e) -> float:
        e = np.asarray(e, dtype=float)
        return float(e @ self.matrix @ e)


def directional_energy_matrix(u: QField, x, r) -> EnergyMatrix:
    """Integrated Gram matrix of the directional derivatives over B_r(x).

    The result is symmetric PSD and its trace equals the unrescaled
    discrete energy of the same ball exactly (same edge set).  The
    ``partial_stencil`` flag is raised when the ball touches nodes with
    missing forward edges, i.e. the stencil leaves the mask.
    """
    idx = _region_nodes(u, (x, r))
    M = u.moments()[idx].sum(axis=0) * u.domain.h ** u.domain.m
    M = 0.5 * (M + M.T)
    partial = bool(np.any(u.domain.nbr[idx, 0::2] < 0))
    return EnergyMatrix(M, np.asarray(x, dtype=float), float(r), partial)


def blow_up(u: QField, x, r, resolution: int) -> QField:
    """Rescaled restriction y -> u(x + r*y) resampled on a unit-ball lattice.

    Nearest-node sampling; the sheet pairings of the new field are
    recomputed, which keeps them optimal (pairing-consistent transport).
    """
    x = np.asarray(x, dtype=float)
    if r < 2 * u.domain.h:
        raise UnderResolvedError(f"blow-up radius {r} is below 2h = {2 * u.domain.h}")
    if not u.domain.ball_fits(x, r):
        raise DomainError("blow-up ball leaves the domain")
    new_dom = ball_domain(u.domain.m, 1.0 / resolution, 1.0)
    src = u.domain.tree().query(x[None, :] + r * new_dom.positions)[1]
    vals = u.values[src].copy()
    return QField(new_dom, u.target, vals)


# ---------------------------------------------------------------------------
# boundary data


def apply_boundary_datum(
    domain: LatticeDomain,
    target: T.TargetManifold,
    g,
    Q: int,
    fill: str = "homogeneous",
    fill_value=None,
    seed: int = 0,
) -> QField:
    """Freeze ``g`` on the boundary nodes and initialize the interior.

    ``g`` maps a position to a (Q, N) coordinate array; values are
    projected to the target (rejecting points beyond the projection tube).
    Fill modes: ``homogeneous`` evaluates ``g`` along the ray through the
    node (ball domains), ``constant`` uses ``fill_value``, ``random`` draws
    seeded target points.
    """
    n = domain.n_nodes
    N = target.ambient_dim
    vals = np.empty((n, Q, N))

    def eval_g(xs):
        # batch evaluation when g supports it, else per-node
        try:
            p = np.asarray(g(xs), dtype=float)
            assert p.shape == (xs.shape[0], Q, N)
        except Exception:
            p = np.stack([np.asarray(g(x), dtype=float) for x in xs])
        if p.shape != (xs.shape[0], Q, N):
            raise DimensionMismatchError(
                f"boundary datum returned shape {p.shape}, expected {(xs.shape[0], Q, N)}"
            )
        T.check_projectable(target, p)
        return T.project(target, p)

    bidx = np.nonzero(domain.boundary)[0]
    if bidx.size:
        vals[bidx] = eval_g(domain.positions[bidx])

    iidx = np.nonzero(domain.interior)[0]
    if fill == "homogeneous":
        if domain.ball_radius is None:
            raise DomainError("homogeneous fill needs a ball domain")
        c, R = domain.ball_center, domain.ball_radius
        d = domain.positions[iidx] - c
        nd = np.linalg.norm(d, axis=1, keepdims=True)
        rays = np.where(nd > 1e-12, d / np.maximum(nd, 1e-300), np.eye(domain.m)[0])
        if iidx.size:
            vals[iidx] = eval_g(c + (R - domain.h / 2) * rays)
    elif fill == "constant":
        if fill_value is None:
            fill_value = vals[bidx[0]] if bidx.size else np.zeros((Q, N))
        p = T.project(target, np.asarray(fill_value, dtype=float))
        vals[iidx] = np.broadcast_to(p, (iidx.size, Q, N))
    elif fill == "random":
        rng = np.random.default_rng(seed)
        for v in iidx:
            vals[v] = np.stack([T.random_point(target, rng) for _ in range(Q)])
    else:
        raise DomainError(f"unknown fill mode {fill!r}")

    return QField(domain, target, vals)


# ---------------------------------------------------------------------------
# snapshots

_FLOAT_FMT = "%.17g"


def save_field(u: QField, path_or_file):
    """Write the documented text snapshot (see README: file formats)."""
    own = isinstance(path_or_file, (str, bytes))
    f = open(path_or_file, "w") if own else path_or_file
    try:
        d = u.domain
        f.write(f"{SNAPSHOT_MAGIC}\n")
        f.write(f"m {d.m}\n")
        f.write(f"h {_FLOAT_FMT % d.h}\n")
        f.write(f"Q {u.Q}\n")
        f.write(f"N {u.N}\n")
        f.write(f"target {u.target.id}\n")
        f.write("origin " + " ".join(_FLOAT_FMT % c for c in d.origin) + "\n")
        f.write("shape " + " ".join(str(s) for s in d.shape) + "\n")
        if d.ball_radius is not None:
            f.write("ball " + " ".join(_FLOAT_FMT % c for c in d.ball_center))
            f.write(" " + _FLOAT_FMT % d.ball_radius + "\n")
        f.write(f"nodes {d.n_nodes}\n")
        for v in range(d.n_nodes):
            row = [str(d.node_grid[v]), str(int(d.status[v]))]
            row += [_FLOAT_FMT % c for c in u.values[v].reshape(-1)]
            f.write(" ".join(row) + "\n")
    finally:
        if own:
            f.close()


def load_field(path_or_file) -> QField:
    own = isinstance(path_or_file, (str, bytes))
    f = open(path_or_file) if own else path_or_file
    try:
        if f.readline().strip() != SNAPSHOT_MAGIC:
            raise DomainError("not a qharmlab field snapshot")
        header = {}
        for _ in range(32):
            pos_key = f.readline().split()
            header[pos_key[0]] = pos_key[1:]
            if pos_key[0] == "nodes":
                break
        m = int(header["m"][0])
        h = float(header["h"][0])
        Q = int(header["Q"][0])
        N = int(header["N"][0])
        target = T.from_id(header["target"][0])
        origin = np.array([float(x) for x in header["origin"]])
        shape = tuple(int(x) for x in header["shape"])
        n = int(header["nodes"][0])
        body = np.loadtxt(io.StringIO(f.read()), ndmin=2)
        if body.shape != (n, 2 + Q * N):
            raise DomainError(f"snapshot body has shape {body.shape}, expected {(n, 2 + Q * N)}")
        keep = np.zeros(int(np.prod(shape)), dtype=bool)
        node_grid = body[:, 0].astype(np.int64)
        keep[node_grid] = True
        ball_center = ball_radius = None
        if "ball" in header:
            *c, r = header["ball"]
            ball_center = np.array([float(x) for x in c])
            ball_radius = float(r)
        dom = _build_domain(m, h, origin, shape, keep.reshape(shape), ball_center, ball_radius)
        order = np.argsort(node_grid)
        if not np.array_equal(node_grid[order], dom.node_grid):
            raise DomainError("snapshot node set is inconsistent")
        dom.status = body[order, 1].astype(np.uint8)
        vals = body[order, 2:].reshape(n, Q, N)
        return QField(dom, target, vals)
    finally:
        if own:
            f.close()
