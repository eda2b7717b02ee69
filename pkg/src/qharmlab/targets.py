"""Target manifolds: coordinate conventions, projection and distance.

Three targets are supported:

* ``euclidean:N`` -- all of R^N, chordal metric, trivial projection;
* ``sphere:n``    -- the unit n-sphere embedded in R^(n+1), chordal
  (ambient) metric, radial projection;
* ``torus2``      -- the flat square torus R^2/Z^2 in periodic chart
  coordinates normalized to [0,1)^2, intrinsic metric (per-axis wrap).

The sphere is treated extrinsically because the Q-point distance is defined
through the ambient embedding; the torus is treated intrinsically because
it carries no canonical flat embedding and its chart metric is the natural
one for the counterexample construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ProjectionError

EUCLIDEAN, SPHERE, TORUS2 = 0, 1, 2

# How far off-manifold a point may sit before projection refuses (sphere).
PROJECTION_TUBE = 0.3


@dataclass(frozen=True)
class TargetManifold:
    """Descriptor of a target: kind tag, ambient and intrinsic dimensions."""

    kind: int
    ambient_dim: int
    intrinsic_dim: int

    @property
    def id(self) -> str:
        if self.kind == EUCLIDEAN:
            return f"euclidean:{self.ambient_dim}"
        if self.kind == SPHERE:
            return f"sphere:{self.intrinsic_dim}"
        return "torus2"

    def __repr__(self):
        return f"TargetManifold({self.id!r})"


def euclidean(N: int) -> TargetManifold:
    return TargetManifold(EUCLIDEAN, N, N)


def sphere(n: int) -> TargetManifold:
    return TargetManifold(SPHERE, n + 1, n)


def torus2() -> TargetManifold:
    return TargetManifold(TORUS2, 2, 2)


def from_id(s: str) -> TargetManifold:
    """Parse a manifold id string: ``euclidean:N``, ``sphere:n``, ``torus2``."""
    s = s.strip()
    if s == "torus2":
        return torus2()
    try:
        kind, dim = s.split(":")
        dim = int(dim)
    except ValueError as exc:
        raise DomainError(f"unknown manifold id {s!r}") from exc
    if kind == "euclidean":
        return euclidean(dim)
    if kind == "sphere":
        return sphere(dim)
    raise DomainError(f"unknown manifold id {s!r}")


def project(m: TargetManifold, p) -> np.ndarray:
    """Nearest manifold point.  Idempotent; wraps mod 1 on the torus."""
    p = np.asarray(p, dtype=float)
    if m.kind == EUCLIDEAN:
        return p.copy()
    if m.kind == SPHERE:
        norm = np.linalg.norm(p, axis=-1, keepdims=True)
        if np.any(norm == 0.0):
            raise ProjectionError("cannot project the origin to the sphere")
        return p / norm
    return np.mod(p, 1.0)


def on_manifold(m: TargetManifold, p, tol: float = 1e-10) -> bool:
    p = np.asarray(p, dtype=float)
    if m.kind == EUCLIDEAN:
        return True
    if m.kind == SPHERE:
        return bool(np.all(np.abs(np.linalg.norm(p, axis=-1) - 1.0) <= tol))
    return bool(np.all((p >= 0.0) & (p < 1.0)))


def check_projectable(m: TargetManifold, p, tube: float = PROJECTION_TUBE):
    """Raise if ``p`` lies beyond the safe projection tube."""
    p = np.asarray(p, dtype=float)
    if m.kind == SPHERE:
        norm = np.linalg.norm(p, axis=-1)
        if np.any(np.abs(norm - 1.0) > tube):
            raise ProjectionError(
                f"point(s) at distance {float(np.max(np.abs(norm - 1.0))):.3g} "
                f"from the sphere exceed the projection tube {tube}"
            )


def wrap_diff(d) -> np.ndarray:
    """Shortest representative of a torus chart difference, per axis in [-1/2, 1/2)."""
    d = np.asarray(d, dtype=float)
    return d - np.round(d)


def distance(m: TargetManifold, p, q) -> float:
    """Point distance used by the Q-point metric on this target.

    Euclidean and sphere are chordal in ambient coordinates; the torus uses
    the intrinsic quotient distance (minimum over lattice translates, which
    separates per axis on the square lattice).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if m.kind == TORUS2:
        return float(np.linalg.norm(wrap_diff(p - q)))
    return float(np.linalg.norm(p - q))


def metric_fn(m: TargetManifold):
    """Distance callable suitable for :func:`qharmlab.qspace.g_distance`."""
    if m.kind == TORUS2:
        return lambda p, q: float(np.linalg.norm(wrap_diff(np.asarray(p) - np.asarray(q))))
    return None  # Euclidean default


def second_fundamental_form(m: TargetManifold, p, v) -> np.ndarray:
    """A(v, v) at p: ``-|v|^2 p`` on the unit sphere, zero on flat targets."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if m.kind != SPHERE:
        return np.zeros_like(v)
    nv = np.linalg.norm(v)
    if abs(float(np.dot(p, v))) > 1e-8 * max(nv, 1e-300):
        raise DomainError("vector is not tangent to the sphere at p")
    return -(nv**2) * p


def random_point(m: TargetManifold, rng: np.random.Generator) -> np.ndarray:
    if m.kind == EUCLIDEAN:
        return rng.standard_normal(m.ambient_dim)
    if m.kind == SPHERE:
        v = rng.standard_normal(m.ambient_dim)
        return v / np.linalg.norm(v)
    return rng.random(2)
