"""Jones-type flatness numbers, the best-plane bound, and Reifenberg checks.

For a weighted atomic measure mu the flatness number of a ball is

    D_mu^k(x, r) = r^(-k-2) * min over affine k-planes V of
                   sum over atoms in B_r(x) of w * dist(atom, V)^2,

computed exactly from the second-moment form of the restricted measure:
the optimal plane passes through the weighted centroid and spans the top
eigenvectors, making D the tail eigenvalue sum times r^(-k-2).

The discrete Reifenberg hypothesis is the Carleson-type smallness of the
double integral of D over balls and dyadic scales; the checker evaluates
it on a ball grid and reports the packing number of the input collection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatchError, DomainError, PreconditionError
from .lattice import QField
from .monotone import radial_quantity_P

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class AffinePlane:
    """Affine k-plane through ``base`` spanned by orthonormal ``basis`` rows."""

    base: np.ndarray
    basis: np.ndarray  # (k, m), orthonormal rows

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim != 2 or basis.shape[1] != base.shape[0]:
            raise DimensionMismatchError("basis must be (k, m) with m matching the base point")
        if basis.shape[0]:
            gram = basis @ basis.T
            if np.max(np.abs(gram - np.eye(basis.shape[0]))) > 1e-12:
                raise DomainError("plane basis is not orthonormal")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def distance(self, points) -> np.ndarray:
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.base
        if self.dim:
            d = d - (d @ self.basis.T) @ self.basis
        return np.linalg.norm(d, axis=1)


@dataclass
class DiscreteMeasure:
    """Weighted atoms in R^m."""

    atoms: np.ndarray  # (P, m)
    weights: np.ndarray  # (P,)
    k: int | None = None  # intended dimension, informational

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.atoms.shape[0],):
            raise DimensionMismatchError("weights must be one per atom")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.atoms)):
            raise DomainError("weights must be positive and atoms finite")

    @property
    def m(self) -> int:
        return self.atoms.shape[1]

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def restrict_mask(self, x, r) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(self.atoms - x, axis=1) <= r + 1e-12

    def restricted(self, mask) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms[mask], self.weights[mask], self.k)

    def min_gap(self) -> float:
        if self.atoms.shape[0] < 2:
            return 1.0
        d, _ = cKDTree(self.atoms).query(self.atoms, k=2)
        gaps = d[:, 1]
        gaps = gaps[gaps > 0]
        return float(gaps.min()) if gaps.size else 1.0

    @staticmethod
    def from_balls(centers, radii, k: int) -> "DiscreteMeasure":
        radii = np.asarray(radii, dtype=float)
        return DiscreteMeasure(np.asarray(centers, dtype=float), radii**k, k)

    @staticmethod
    def load(path) -> "DiscreteMeasure":
        rows = np.loadtxt(path, ndmin=2)
        return DiscreteMeasure(rows[:, :-1], rows[:, -1])

    def save(self, path):
        np.savetxt(path, np.column_stack([self.atoms, self.weights]), fmt="%.17g")


def beta_number(mu: DiscreteMeasure, x, r, k: int):
    """Flatness number and the optimal plane of mu restricted to B_r(x).

    Returns ``(D, plane)``; an empty restriction gives ``(0.0, None)`` (the
    definitional infimum over planes through any point).
    """
    if not 0 <= k <= mu.m:
        raise DimensionMismatchError(f"k={k} outside [0, {mu.m}]")
    mask = mu.restrict_mask(x, r)
    if not mask.any():
        return 0.0, None
    pts = mu.atoms[mask]
    w = mu.weights[mask]
    xm = (w[:, None] * pts).sum(axis=0) / w.sum()
    d = pts - xm
    R = np.einsum("p,pi,pj->ij", w, d, d)
    lam, vec = np.linalg.eigh(R)  # ascending
    lam_desc = lam[::-1]
    vec_desc = vec[:, ::-1]
    D = float(lam_desc[k:].sum()) * float(r) ** (-(k + 2))
    plane = AffinePlane(xm, vec_desc[:, :k].T)
    return D, plane


@dataclass
class DoublingReport:
    n_samples: int
    violations: list = field(default_factory=list)
    restriction_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.restriction_violations


def beta_doubling_check(mu: DiscreteMeasure, samples, k: int, rng=None) -> DoublingReport:
    """Verify D(x, r) <= 2^(k+2) D(y, 2r) for |x-y| <= r, and that
    restricting the measure never increases D."""
    rng = rng or np.random.default_rng(0)
    report = DoublingReport(n_samples=len(samples))
    slack = 1e-12
    for x, y, r in samples:
        if np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) > r + 1e-12:
            raise PreconditionError("doubling samples need |x - y| <= r")
        d_small, _ = beta_number(mu, x, r, k)
        d_big, _ = beta_number(mu, y, 2 * r, k)
        bound = 2 ** (k + 2) * d_big
        if d_small > bound + slack * max(1.0, d_small):
            report.violations.append((x, y, r, d_small, bound))
        # restriction monotonicity against a sampled half-space
        normal = rng.standard_normal(mu.m)
        normal /= np.linalg.norm(normal)
        mask = (mu.atoms - np.asarray(x, dtype=float)) @ normal <= 0
        if mask.any():
            d_half, _ = beta_number(mu.restricted(mask), x, r, k)
            if d_half > d_small + slack * max(1.0, d_half):
                report.restriction_violations.append((x, r, d_half, d_small))
    return report


def dyadic_ds_ladder(r: float, floor: float):
    """Midpoint scales of the dyadic intervals of (0, r], weight ln 2 each."""
    scales = []
    s = r / np.sqrt(2.0)  # log-midpoint of (r/2, r]
    while s >= floor:
        scales.append(s)
        s /= 2.0
    return scales


def carleson_integrand(mu: DiscreteMeasure, x, r, k: int, ladder=None) -> float:
    """Dyadic-sum approximation of
    int over B_r(x) of (int_0^r D^k(y, s) ds/s) dmu(y)."""
    if ladder is None:
        ladder = dyadic_ds_ladder(r, mu.min_gap() / 4)
    mask = mu.restrict_mask(x, r)
    if not mask.any():
        return 0.0
    total = 0.0
    for y, w in zip(mu.atoms[mask], mu.weights[mask]):
        acc = 0.0
        for s in ladder:
            acc += beta_number(mu, y, s, k)[0]
        total += w * acc * LN2
    return total


@dataclass
class ReifenbergReport:
    holds: bool
    delta_R: float
    packing_sum: float
    worst_ratio: float
    worst_ball: tuple | None
    tested_balls: int
    per_ball: list = field(default_factory=list)  # (center, r, carleson, mass)

    def to_dict(self):
        return {
            "holds": self.holds,
            "delta_R": self.delta_R,
            "packing_sum": self.packing_sum,
            "worst_ratio": self.worst_ratio,
            "tested_balls": self.tested_balls,
        }


def reifenberg_verdict(centers, radii, k: int, delta_R: float = 0.01, C_R: float | None = None) -> ReifenbergReport:
    """Carleson-smallness check for a disjoint ball collection.

    Requires the 1/10-shrunk balls pairwise disjoint and centers in the
    unit ball (caller rescales).  Builds mu = sum r_x^k delta_x, evaluates
    the dyadic Carleson sum on a grid of test balls inside B_2, and reports
    whether every test ball stays below delta_R^2 r^k, together with the
    packing sum (compared against C_R when given, never asserted).
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.asarray(radii, dtype=float)
    if np.any(np.linalg.norm(centers, axis=1) > 1.0 + 1e-9):
        raise PreconditionError("ball centers must lie in the closed unit ball")
    tree = cKDTree(centers)
    for i, j in sorted(tree.query_pairs(float(2 * radii.max() / 10 + 1e-12))):
        if np.linalg.norm(centers[i] - centers[j]) < (radii[i] + radii[j]) / 10 - 1e-12:
            raise PreconditionError(
                f"shrunk balls {i} and {j} overlap", detail=(int(i), int(j))
            )
    mu = DiscreteMeasure.from_balls(centers, radii, k)
    floor = max(float(radii.min()) / 4, 1e-6)

    tests = []
    for c in centers:
        r = 2.0
        while r >= max(floor, 1e-3):
            if np.linalg.norm(c) + r <= 2.0 + 1e-9:
                tests.append((c, r))
            r /= 2.0
    tests.append((np.zeros(mu.m), 2.0))

    worst_ratio, worst_ball = 0.0, None
    per_ball = []
    for c, r in tests:
        val = carleson_integrand(mu, c, r, k, ladder=dyadic_ds_ladder(r, floor))
        mass = float(mu.weights[mu.restrict_mask(c, r)].sum())
        ratio = val / (delta_R**2 * r**k)
        per_ball.append((c.tolist(), r, val, mass))
        if ratio > worst_ratio:
            worst_ratio, worst_ball = ratio, (c.tolist(), r)
    return ReifenbergReport(
        holds=bool(worst_ratio < 1.0),
        delta_R=delta_R,
        packing_sum=float((radii**k).sum()),
        worst_ratio=float(worst_ratio),
        worst_ball=worst_ball,
        tested_balls=len(tests),
        per_ball=per_ball,
    )


# ---------------------------------------------------------------------------
# best-plane inequality


@dataclass
class BestPlaneReport:
    D: float
    main_rhs: float
    main_ratio: float
    lambda_lhs: list
    lambda_rhs: list
    lambda_ratios: list
    eps: float

    @property
    def ok(self) -> bool:
        return self.main_ratio <= 1.0 + 1e-9 and all(t <= 1.0 + 1e-9 for t in self.lambda_ratios)


def best_plane_inequality_check(u: QField, mu: DiscreteMeasure, x, r, k: int, eps: float) -> BestPlaneReport:
    """Evaluate the eigen-form control of the flatness number by radial energy.

    Hypothesis (checked): every (k+1)-dimensional direction subspace
    carries normalized energy at least eps on B_r(x), i.e. the sum of the
    k+1 smallest eigenvalues of r^(2-m) M is >= eps.  Then

        D^k_mu(x, r) <= (m-k)(k+1) 2^m / (eps r^k) * int P_u(y, 2r) dmu(y)

    and, measure-normalized, each eigenvalue obeys
    lambda_j int_{B_r} |Du.e_j|^2 <= 2^m int P_u(y, 2r) dmu(y) (for r <= 1).
    Ratios of both sides are reported; violations would be genuine bugs
    since the discrete derivation is exact.
    """
    from .lattice import directional_energy_matrix

    x = np.asarray(x, dtype=float)
    r = float(r)
    if r > 1.0 + 1e-12:
        raise PreconditionError("inequality is stated for r <= 1")
    m = u.domain.m
    if not mu.restrict_mask(x, r).all():
        raise PreconditionError("measure must be supported in B_r(x)")

    M = directional_energy_matrix(u, x, r)
    lam_dir = np.linalg.eigvalsh(r ** (2 - m) * M.matrix)
    if k + 1 <= m and float(lam_dir[: k + 1].sum()) < eps:
        vecs = np.linalg.eigh(r ** (2 - m) * M.matrix)[1][:, : k + 1]
        raise PreconditionError(
            f"(k+1)-direction energy {float(lam_dir[: k + 1].sum()):.3g} below eps={eps}",
            detail=vecs,
        )

    # probability normalization (both sides of the main bound scale alike)
    prob = DiscreteMeasure(mu.atoms, mu.weights / mu.total, mu.k)
    moments = u.moments()
    Pvals = np.array([radial_quantity_P(u, y, 2 * r, moments) for y in prob.atoms])
    int_P = float(np.dot(prob.weights, Pvals))

    D, _ = beta_number(prob, x, r, k)
    main_rhs = (m - k) * (k + 1) * 2**m / (eps * r**k) * int_P
    main_ratio = D / main_rhs if main_rhs > 0 else (0.0 if D <= 1e-15 else np.inf)

    # second-moment eigenstructure of the measure
    w = prob.weights
    xm = (w[:, None] * prob.atoms).sum(axis=0)
    d = prob.atoms - xm
    Rform = np.einsum("p,pi,pj->ij", w, d, d)
    lam, vec = np.linalg.eigh(Rform)
    lam, vec = lam[::-1], vec[:, ::-1]  # descending

    idx = u.domain.nodes_in_ball(x, r)
    hm = u.domain.h**m
    lhs, rhs, ratios = [], [], []
    for j in range(m):
        e = vec[:, j]
        dir_energy = float(np.einsum("i,kij,j->", e, moments[idx], e)) * hm
        L = lam[j] * dir_energy
        Rside = 2**m * int_P
        lhs.append(L)
        rhs.append(Rside)
        ratios.append(L / Rside if Rside > 0 else (0.0 if L <= 1e-15 else np.inf))
    return BestPlaneReport(
        D=D, main_rhs=main_rhs, main_ratio=main_ratio, lambda_lhs=lhs, lambda_rhs=rhs, lambda_ratios=ratios, eps=eps
    )


def rectifiability_sum(mu: DiscreteMeasure, k: int, ladder=None):
    """Per-atom dyadic sums of int_0^1 D^k(atom, s) ds/s with summary stats."""
    if ladder is None:
        ladder = dyadic_ds_ladder(1.0, mu.min_gap() / 4)
    sums = np.zeros(mu.atoms.shape[0])
    for i, y in enumerate(mu.atoms):
        sums[i] = LN2 * sum(beta_number(mu, y, s, k)[0] for s in ladder)
    return {
        "per_atom": sums,
        "finite": np.isfinite(sums),
        "max": float(sums.max()) if sums.size else 0.0,
        "mean": float(sums.mean()) if sums.size else 0.0,
    }
