"""The metric space of unordered Q-tuples of target points.

A Q-point is a multiset of Q points in R^N.  The distance between two
Q-points is the square root of the minimal sum of squared point distances
over all ways of pairing the sheets (an assignment problem).  Everything
here is exact and pure; the lattice machinery stores raw arrays and calls
back into :func:`best_matching` only to (re)verify stored pairings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatchError, DomainError

# Exhaustive search doubles as the oracle up to this multiplicity; above it
# the cubic-time assignment solver takes over.
BRUTE_FORCE_MAX_Q = 6


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected (Q, N) point array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class QPoint:
    """Unordered multiset of ``Q`` points in ``R^N`` (stored as a (Q, N) array)."""

    points: np.ndarray

    def __init__(self, points):
        arr = _as_points(points)
        if arr.shape[0] < 1:
            raise DimensionMismatchError("QPoint needs at least one sheet")
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def Q(self) -> int:
        return self.points.shape[0]

    @property
    def N(self) -> int:
        return self.points.shape[1]

    def __iter__(self):
        return iter(self.points)

    def to_flat(self) -> np.ndarray:
        """Serialize as a flat array of Q*N numbers in row-major sheet order."""
        return self.points.reshape(-1).copy()

    @staticmethod
    def from_flat(flat, Q: int, N: int) -> "QPoint":
        flat = np.asarray(flat, dtype=float)
        if flat.size != Q * N:
            raise DimensionMismatchError(f"expected {Q * N} numbers, got {flat.size}")
        return QPoint(flat.reshape(Q, N))

    def equals(self, other: "QPoint", metric=None) -> bool:
        """Order-independent equality: distance zero up to a scale-aware slack."""
        tol = 1e-9 * (1.0 + abs_qpoint(self) + abs_qpoint(other))
        return g_distance(self, other, metric) <= tol


@dataclass(frozen=True)
class MatchingResult:
    """Optimal sheet pairing between two Q-points.

    ``permutation[l]`` is the sheet of the second argument paired with sheet
    ``l`` of the first; ``cost`` is the (minimal) sum of squared distances.
    """

    permutation: np.ndarray
    cost: float

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.int64)
        object.__setattr__(self, "permutation", perm)


def _check_compatible(a: QPoint, b: QPoint):
    if a.Q != b.Q:
        raise DimensionMismatchError(f"multiplicity mismatch: {a.Q} != {b.Q}")
    if a.N != b.N:
        raise DimensionMismatchError(f"coordinate dimension mismatch: {a.N} != {b.N}")


def _cost_matrix(a: QPoint, b: QPoint, metric) -> np.ndarray:
    if metric is None:
        diff = a.points[:, None, :] - b.points[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    Q = a.Q
    cost = np.empty((Q, Q))
    for i in range(Q):
        for j in range(Q):
            cost[i, j] = metric(a.points[i], b.points[j]) ** 2
    return cost


def best_matching(a: QPoint, b: QPoint, metric=None) -> MatchingResult:
    """Minimal-cost sheet pairing between ``a`` and ``b``.

    Exhaustive over all Q! permutations for Q <= 6 (this path doubles as the
    test oracle); the Hungarian-type assignment solver above that, so large
    multiplicities degrade to cubic time instead of failing.
    """
    _check_compatible(a, b)
    cost = _cost_matrix(a, b, metric)
    if a.Q <= BRUTE_FORCE_MAX_Q:
        best_perm, best_cost = None, math.inf
        rng = range(a.Q)
        for perm in itertools.permutations(rng):
            c = sum(cost[l, perm[l]] for l in rng)
            if c < best_cost:
                best_cost, best_perm = c, perm
        return MatchingResult(np.array(best_perm), float(best_cost))
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(a.Q, dtype=np.int64)
    perm[rows] = cols
    return MatchingResult(perm, float(cost[rows, cols].sum()))


def g_distance(a: QPoint, b: QPoint, metric=None) -> float:
    """Min-over-pairings distance between two Q-points.

    ``metric`` is an optional point distance injected by non-Euclidean
    targets (e.g. the flat torus uses its intrinsic chart distance); the
    default is Euclidean.
    """
    return math.sqrt(best_matching(a, b, metric).cost)


def abs_qpoint(a: QPoint) -> float:
    """Distance to the Q-fold origin: sqrt of the summed squared norms."""
    return float(np.sqrt(np.sum(a.points * a.points)))


@dataclass
class PowerSumCertificate:
    """Trace of the peeling decision for multiset comparison."""

    equal: bool
    reason: str
    peeled_blocks: list = field(default_factory=list)
    power_sums_a: list = field(default_factory=list)
    power_sums_b: list = field(default_factory=list)


def power_sum_multisets_equal(a, b, exponents, rtol: float = 1e-9):
    """Decide whether two multisets of non-negative reals coincide.

    The decision peels maxima: compare the largest elements, strip the
    equal leading block, recurse on the remainder.  (This mirrors comparing
    the ratios ``(x / max)**k`` as the exponent grows: only the leading
    block survives.)  The supplied ``exponents`` are used to record the
    power sums in the certificate.

    Returns ``(equal, certificate)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError("multisets must be 1-d and of equal size")
    if np.any(a < 0) or np.any(b < 0):
        raise DomainError("power-sum comparison requires non-negative inputs")
    exponents = list(exponents)
    if len(exponents) < 2 or any(e2 <= e1 for e1, e2 in zip(exponents, exponents[1:])):
        raise DomainError("need at least two strictly increasing exponents")

    cert = PowerSumCertificate(equal=True, reason="all blocks matched")
    scale = max(1.0, float(a.max(initial=0.0)), float(b.max(initial=0.0)))
    cert.power_sums_a = [float(np.sum(a**k)) for k in exponents]
    cert.power_sums_b = [float(np.sum(b**k)) for k in exponents]

    ra = np.sort(a)[::-1].tolist()
    rb = np.sort(b)[::-1].tolist()
    tol = rtol * scale
    while ra:
        ma, mb = ra[0], rb[0]
        if abs(ma - mb) > tol:
            cert.equal = False
            cert.reason = f"leading values differ: {ma} vs {mb}"
            return False, cert
        na = sum(1 for x in ra if ma - x <= tol)
        nb = sum(1 for x in rb if ma - x <= tol)
        if na != nb:
            cert.equal = False
            cert.reason = f"multiplicity of leading value {ma} differs: {na} vs {nb}"
            return False, cert
        cert.peeled_blocks.append((float(ma), na))
        ra, rb = ra[na:], rb[nb:]
    return True, cert
