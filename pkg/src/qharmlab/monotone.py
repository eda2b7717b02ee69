"""Mollified local energy, pinching, the radial quantity and subharmonicity.

The mollified energy of a field at center x and scale r is

    theta(x, r) = r^(2-m) * sum_y phi(|x-y|/r) |Du(y)|^2 h^m,

with a non-increasing weight phi supported in [0, 1).  For stationary maps
the continuum quantity is non-decreasing in r and its increments dominate a
weighted radial-derivative integral; discretely both statements hold up to
an O(h) slack which the scan helpers below measure rather than hide.

The default weight is phi(t) = (1-t)^2, which satisfies the load-bearing
admissibility condition -phi'(t) >= (1-t)^+ used by every estimate here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from . import targets as T
from .errors import DomainError, UnderResolvedError
from .lattice import QField

_GRID = 10_000


@dataclass(frozen=True)
class Kernel:
    """Radial weight phi with derivative, validated on a dense grid."""

    phi: callable
    dphi: callable
    name: str = "custom"

    def validate(self):
        t = np.linspace(0.0, 1.0, _GRID)
        ph = np.asarray(self.phi(t), dtype=float)
        dp = np.asarray(self.dphi(t), dtype=float)
        if np.any(ph < -1e-12):
            raise DomainError("kernel must be non-negative")
        if np.any(dp > 1e-12):
            raise DomainError("kernel must be non-increasing")
        if np.any(-dp < (1.0 - t) - 1e-9):
            raise DomainError("kernel fails the admissibility bound -phi' >= (1-t)+")
        t_out = np.linspace(1.0, 2.0, 100)
        if np.any(np.abs(np.asarray(self.phi(t_out))) > 1e-12):
            raise DomainError("kernel must vanish for t >= 1")
        return self

    def weights(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < 1.0, self.phi(np.minimum(t, 1.0)), 0.0)

    def integral(self) -> float:
        t = np.linspace(0.0, 1.0, _GRID)
        trap = getattr(np, "trapezoid", None) or np.trapz
        return float(trap(self.phi(t), t))

    def psi_grid(self, m: int):
        """A primitive of phi'(t) t^(m-2) on [0, 1], tabulated by quadrature."""
        t = np.linspace(1e-12, 1.0, _GRID)
        integrand = self.dphi(t) * t ** (m - 2)
        psi = np.concatenate([[0.0], np.cumsum((integrand[1:] + integrand[:-1]) / 2 * np.diff(t))])
        return t, psi

    def psi_drop_constant(self, m: int) -> float:
        """min over a in (0, 1/2] of (psi(a) - psi(2a)) / a^(m-1).

        This is the kernel constant in the lower bound for energy
        increments; positive for admissible kernels.
        """
        t, psi = self.psi_grid(m)
        a = np.linspace(1e-3, 0.5, 500)
        pa = np.interp(a, t, psi)
        p2a = np.interp(2 * a, t, psi)
        return float(np.min((pa - p2a) / a ** (m - 1)))


def default_kernel() -> Kernel:
    return Kernel(
        phi=lambda t: np.where(np.asarray(t) < 1.0, (1.0 - np.minimum(t, 1.0)) ** 2, 0.0),
        dphi=lambda t: np.where(np.asarray(t) < 1.0, -2.0 * (1.0 - np.minimum(t, 1.0)), 0.0),
        name="one-minus-t-squared",
    ).validate()


def _require_scale(u: QField, x, r, factor: float = 1.0):
    if r < 2 * u.domain.h:
        raise UnderResolvedError(f"scale {r} below 2h = {2 * u.domain.h}")
    if not u.domain.ball_fits(x, factor * r):
        raise DomainError(f"ball B({np.asarray(x)}, {factor * r}) leaves the domain")


def theta(u: QField, kernel: Kernel, x, r, density=None) -> float:
    """Mollified, scale-normalized local energy at (x, r)."""
    _require_scale(u, x, r)
    x = np.asarray(x, dtype=float)
    if density is None:
        density = u.energy_density()
    idx = u.domain.nodes_in_ball(x, r)
    d = np.linalg.norm(u.domain.positions[idx] - x, axis=1)
    w = kernel.weights(d / r)
    h, m = u.domain.h, u.domain.m
    return float(r ** (2 - m) * np.dot(w, density[idx]) * h**m)


def pinch(u: QField, kernel: Kernel, x, s, density=None) -> float:
    """Two-scale energy gap theta(x, 4s) - theta(x, 2s).

    Negative values are reported as-is: they quantify discretization error
    and are never clamped away.
    """
    _require_scale(u, x, s, factor=4.0)
    return theta(u, kernel, x, 4 * s, density) - theta(u, kernel, x, 2 * s, density)


def radial_quantity_P(u: QField, x, r, moments=None) -> float:
    """Normalized radial-derivative energy r^(-m) int |Du(y).(y-x)|^2."""
    _require_scale(u, x, r)
    x = np.asarray(x, dtype=float)
    if moments is None:
        moments = u.moments()
    idx = u.domain.nodes_in_ball(x, r)
    v = u.domain.positions[idx] - x
    vals = np.einsum("ki,kij,kj->k", v, moments[idx], v)
    h, m = u.domain.h, u.domain.m
    return float(r**-m * vals.sum() * h**m)


def theta_map(u: QField, kernel: Kernel, r, density=None):
    """theta(., r) at every node by FFT convolution on the full grid.

    Returns ``(values, valid)`` where ``valid`` marks nodes whose ball
    B_r(x) stays inside the domain.  Agrees with :func:`theta` to rounding.
    """
    dom = u.domain
    if r < 2 * dom.h:
        raise UnderResolvedError(f"scale {r} below 2h = {2 * dom.h}")
    if density is None:
        density = u.energy_density()
    grid = np.zeros(int(np.prod(dom.shape)))
    grid[dom.node_grid] = density
    grid = grid.reshape(dom.shape)

    half = int(np.floor(r / dom.h + 1e-12))
    offs = np.meshgrid(*([np.arange(-half, half + 1) * dom.h] * dom.m), indexing="ij")
    dist = np.sqrt(sum(o**2 for o in offs))
    stencil = kernel.weights(dist / r)

    conv = fftconvolve(grid, stencil, mode="same")
    vals = r ** (2 - dom.m) * conv.reshape(-1)[dom.node_grid] * dom.h**dom.m
    valid = dom.boundary_distances() >= r - 1e-12
    return vals, valid


@dataclass
class EnergyProfile:
    """theta / pinch / radial samples of one center across a radius ladder."""

    center: np.ndarray
    radii: list
    theta: list
    pinch: list  # theta(x, 4s) - theta(x, 2s) where resolvable, else nan
    radial: list

    def rows(self):
        for r, th, pi, pp in zip(self.radii, self.theta, self.pinch, self.radial):
            yield (*self.center, r, th, pi, pp)


def energy_profile(u: QField, kernel: Kernel, x, radii) -> EnergyProfile:
    x = np.asarray(x, dtype=float)
    density = u.energy_density()
    moments = u.moments()
    ths, pis, ps = [], [], []
    for r in radii:
        ths.append(theta(u, kernel, x, r, density))
        try:
            pis.append(pinch(u, kernel, x, r / 4, density))
        except (UnderResolvedError, DomainError):
            pis.append(float("nan"))
        ps.append(radial_quantity_P(u, x, r, moments))
    return EnergyProfile(x, list(radii), ths, pis, ps)


def monotonicity_scan(u: QField, kernel: Kernel, centers, radii, density=None):
    """Worst dyadic increment theta(x, r) - theta(x, r/2) over the samples.

    Returns ``(worst, rows)`` where rows hold (center, r, increment,
    local_energy); ``worst`` is the most negative increment normalized by
    h * local_energy (0 when none is negative).
    """
    if density is None:
        density = u.energy_density()
    rows = []
    worst = 0.0
    for x in centers:
        for r in radii:
            if r / 2 < 2 * u.domain.h or not u.domain.ball_fits(x, r):
                continue
            inc = theta(u, kernel, x, r, density) - theta(u, kernel, x, r / 2, density)
            local = theta(u, kernel, x, r, density) + 1e-300
            rows.append((np.asarray(x, dtype=float), r, inc, local))
            if inc < 0:
                worst = min(worst, inc / (u.domain.h * local))
    return worst, rows


# ---------------------------------------------------------------------------
# convexity and subharmonicity


@dataclass(frozen=True)
class ConvexFunction:
    """Scalar function on a flat target with an explicit Hessian."""

    value: callable
    hessian: callable
    name: str = "custom"


def squared_distance_to(p0) -> ConvexFunction:
    p0 = np.asarray(p0, dtype=float)
    return ConvexFunction(
        value=lambda p: np.sum((np.asarray(p) - p0) ** 2, axis=-1),
        hessian=lambda p: 2.0 * np.eye(p0.size),
        name=f"sqdist-to-{p0.tolist()}",
    )


@dataclass
class SubharmonicityReport:
    violations: int
    worst: float
    tol: float
    checked_nodes: int
    min_laplacian: float

    def to_dict(self):
        return {
            "violations": self.violations,
            "worst": self.worst,
            "tol": self.tol,
            "checked_nodes": self.checked_nodes,
            "min_laplacian": self.min_laplacian,
        }


def subharmonicity_check(u: QField, f: ConvexFunction, tol: float | None = None) -> SubharmonicityReport:
    """Discrete Laplacian sign check of x -> sum_l f(u_l(x)).

    Requires a flat simply connected target (Euclidean) and convex f; the
    composite is subharmonic for minimizers, so interior nodes should not
    dip below -tol once discretization noise is accounted for.
    """
    if u.target.kind != T.EUCLIDEAN:
        raise DomainError("subharmonicity check needs a flat simply connected target")
    sample = u.values.reshape(-1, u.N)[:: max(1, u.values.shape[0] // 64)]
    for p in sample[:64]:
        hess = np.asarray(f.hessian(p), dtype=float)
        if np.min(np.linalg.eigvalsh(0.5 * (hess + hess.T))) < -1e-10:
            raise DomainError("f is not convex at a sampled target point")

    F = np.asarray(f.value(u.values), dtype=float)
    if F.shape != (u.domain.n_nodes, u.Q):
        F = np.stack([np.asarray(f.value(u.values[:, l, :]), dtype=float) for l in range(u.Q)], axis=1)
    F = F.sum(axis=1)

    dom = u.domain
    lap = np.zeros(dom.n_nodes)
    full = np.ones(dom.n_nodes, dtype=bool)
    for i in range(dom.m):
        fwd, bwd = dom.nbr[:, 2 * i], dom.nbr[:, 2 * i + 1]
        ok = (fwd >= 0) & (bwd >= 0)
        full &= ok
        lap[ok] += (F[fwd[ok]] + F[bwd[ok]] - 2 * F[ok]) / dom.h**2
    full &= dom.interior
    lap = lap[full]

    if tol is None:
        tol = 256 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(F)))) / dom.h**2
    bad = lap < -tol
    return SubharmonicityReport(
        violations=int(bad.sum()),
        worst=float(-lap[bad].min()) if bad.any() else 0.0,
        tol=float(tol),
        checked_nodes=int(full.sum()),
        min_laplacian=float(lap.min()) if lap.size else 0.0,
    )
