"""Branched double cover of the sphere and its flat-torus uniformization.

The genus-1 curve behind the boundary datum is w^2 = z(z-a)/(z-b); the
substitution y = w(z-b) turns it into y^2 = z(z-a)(z-b), whose holomorphic
differential dz/y is integrated numerically for everything here: the two
periods (loops around branch-point pairs), the uniformizing map to the
unit-square torus chart, and the two-valued Lipschitz boundary datum on a
sphere grid with local blending near the four ramification images.

Square roots along paths are continued by sign-tracking (the branch choice
follows the previous value), so explicit cut bookkeeping never appears;
endpoint singularities at branch points use the tau^2 substitution which
makes the integrand analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import AccuracyError, DomainError, PathError, UnderResolvedError, UnreliableDegreeError
from .targets import wrap_diff

_GL_CACHE: dict[int, tuple] = {}


def _gl(n: int):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = ((x + 1) / 2, w / 2)
    return _GL_CACHE[n]


@dataclass(frozen=True)
class CurveParams:
    """Parameters of the double cover w^2 = z(z-a)/(z-b)."""

    a: complex = 1.0
    b: complex = -1.0

    def __post_init__(self):
        a, b = complex(self.a), complex(self.b)
        if a == 0 or b == 0 or a == b:
            raise DomainError("need a, b nonzero and distinct")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def finite_branch_zs(self):
        return np.array([0.0, self.a, self.b], dtype=complex)

    def cubic(self, z):
        """z (z-a)(z-b), the polynomial under the converted square root."""
        z = np.asarray(z, dtype=complex)
        return z * (z - self.a) * (z - self.b)

    def rational(self, z):
        z = np.asarray(z, dtype=complex)
        return z * (z - self.a) / (z - self.b)


def fiber(params: CurveParams, z):
    """The two cover sheets over z: +/- sqrt(z(z-a)/(z-b)).

    Branch points give a doubled root; the pole z = b is rejected (callers
    work in charts that exclude it).
    """
    z = complex(z)
    if z == params.b:
        raise DomainError("z = b is the pole of the defining rational function")
    w = np.sqrt(complex(params.rational(z)))
    return np.array([w, -w])


# ---------------------------------------------------------------------------
# continued path integrals of dz/y


def _continue_sign(w, y_prev):
    """Pick the square-root branch closest to the previous value."""
    flip = np.abs(w - y_prev) > np.abs(w + y_prev)
    return np.where(flip, -w, w)


def _layer_segment(params, z0, y0, z1, order=12, panels=2):
    """Vectorized integral of dz/y along straight segments (one per row).

    Returns ``(I, y_end, ok)``; rows where sign continuation was ambiguous
    (the root rotated too fast) are flagged not-ok and must be redone by
    the adaptive scalar path.
    """
    z0 = np.asarray(z0, dtype=complex)
    y0 = np.asarray(y0, dtype=complex)
    z1 = np.asarray(z1, dtype=complex)
    x, w = _gl(order)
    I = np.zeros_like(z0)
    y_run = y0.copy()
    ok = np.ones(z0.shape, dtype=bool)
    dz = (z1 - z0) / panels
    for p in range(panels):
        zs = z0 + p * dz
        for j in range(order):
            zj = zs + x[j] * dz
            root = np.sqrt(params.cubic(zj))
            yj = _continue_sign(root, y_run)
            ok &= np.abs(yj - y_run) <= 0.75 * np.abs(yj + y_run) + 1e-300
            ok &= np.abs(yj) > 1e-14
            I += w[j] * dz / np.where(np.abs(yj) > 1e-300, yj, 1.0)
            y_run = yj
    y_end = _continue_sign(np.sqrt(params.cubic(z1)), y_run)
    ok &= np.abs(y_end - y_run) <= 0.75 * np.abs(y_end + y_run) + 1e-300
    return I, y_end, ok


_GL_SCALAR_CACHE: dict[int, tuple] = {}


def _gl_scalar(n: int):
    if n not in _GL_SCALAR_CACHE:
        x, w = _gl(n)
        _GL_SCALAR_CACHE[n] = (x.tolist(), w.tolist())
    return _GL_SCALAR_CACHE[n]


def _scalar_segment(params, z0, y0, z1, order=12, panels=2):
    """Scalar-arithmetic twin of :func:`_layer_segment` for single segments."""
    import cmath

    a, b = params.a, params.b
    x, w = _gl_scalar(order)
    I = 0j
    y_run = complex(y0)
    ok = True
    dz = (complex(z1) - complex(z0)) / panels
    for p in range(panels):
        zs = complex(z0) + p * dz
        for j in range(order):
            zj = zs + x[j] * dz
            root = cmath.sqrt(zj * (zj - a) * (zj - b))
            if abs(root - y_run) > abs(root + y_run):
                root = -root
            if abs(root - y_run) > 0.75 * abs(root + y_run) or abs(root) < 1e-14:
                ok = False
            if root != 0:
                I += w[j] * dz / root
            y_run = root
    y_end = cmath.sqrt(complex(z1) * (complex(z1) - a) * (complex(z1) - b))
    if abs(y_end - y_run) > abs(y_end + y_run):
        y_end = -y_end
    if abs(y_end - y_run) > 0.75 * abs(y_end + y_run):
        ok = False
    return I, y_end, ok


def _segment_adaptive(params, z0, y0, z1, depth=0, tol=1e-12):
    """Adaptive bisection of the continued segment integral (scalar path)."""
    if depth > 48:
        raise PathError("segment keeps bisecting; path runs into a branch point")
    I, y_end, ok = _scalar_segment(params, z0, y0, z1)
    zm = (z0 + z1) / 2
    I2a, y_mid, ok2a = _scalar_segment(params, z0, y0, zm)
    if ok and ok2a:
        I2b, y_end2, ok2b = _scalar_segment(params, zm, y_mid, z1)
        if ok2b and abs(I - (I2a + I2b)) <= tol * (1.0 + abs(I)):
            return I2a + I2b, y_end2
    Ia, ya = _segment_adaptive(params, z0, y0, zm, depth + 1, tol)
    Ib, yb = _segment_adaptive(params, zm, ya, z1, depth + 1, tol)
    return Ia + Ib, yb


def _from_branch(params, e, z1, y1, order=48):
    """Integral of dz/y from the branch point e to z1, anchored at y(z1) = y1.

    Substituting z = e + tau^2 (z1 - e) removes the root singularity:
    dz/y = 2 sqrt(z1 - e) / g(tau) dtau with g analytic and continued from
    tau = 1 where g(1) = y1 / sqrt(z1 - e).
    """
    e = complex(e)
    z1 = complex(z1)
    sq = np.sqrt(z1 - e)
    x, w = _gl(order)  # nodes ascending in [0, 1]
    g_run = complex(y1 / sq)  # branch anchor at tau = 1
    gs = np.empty(order, dtype=complex)
    for i in np.argsort(-x):  # march tau from 1 downward
        tau = x[i]
        z = e + tau**2 * (z1 - e)
        val = complex(np.sqrt(params.cubic(z) / (z - e)))
        g_run = val if abs(val - g_run) <= abs(val + g_run) else -val
        gs[i] = g_run
    return complex(np.sum(w * 2.0 * sq / gs))


def _tail_to_infinity(params, z1, y1, order=48):
    """Integral of dz/y from z1 out to the branch point at infinity.

    In sigma = sqrt(1/z) the integrand is -2 dsigma / sqrt((1-a s)(1-b s))
    with s = sigma^2, anchored by y1 at sigma1.
    """
    z1 = complex(z1)
    sigma1 = np.sqrt(1.0 / z1)
    g_anchor = y1 * sigma1**3  # g = y sigma^3 = sqrt((1-as)(1-bs))
    x, w = _gl(order)
    g_run = complex(g_anchor)
    total = 0.0 + 0.0j
    # march sigma from sigma1 to 0 along the straight segment
    for j in range(order):
        sig = sigma1 * (1.0 - x[j])
        s = sig**2
        val = np.sqrt((1.0 - params.a * s) * (1.0 - params.b * s))
        g = complex(_continue_sign(np.array([val]), np.array([g_run]))[0])
        total += w[j] * (-2.0) * (-sigma1) * 1.0 / g  # dsigma = -sigma1 dx
        g_run = g
    return complex(total)


# ---------------------------------------------------------------------------
# periods and the lattice


@dataclass(frozen=True)
class PeriodLattice:
    """Oriented period pair of dz/y with the unit-square normalization."""

    omega1: complex
    omega2: complex

    def __post_init__(self):
        tau = self.omega2 / self.omega1
        if abs(tau.imag) < 1e-12:
            raise AccuracyError("degenerate period lattice (collinear periods)")
        if tau.imag < 0:
            object.__setattr__(self, "omega2", -self.omega2)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.omega1.real, self.omega2.real], [self.omega1.imag, self.omega2.imag]]
        )

    def to_unit(self, v) -> np.ndarray:
        """Chart coordinates in [0,1)^2 of complex value(s) v modulo the lattice."""
        v = np.asarray(v, dtype=complex)
        flat = np.stack([v.real.reshape(-1), v.imag.reshape(-1)])
        uv = np.linalg.solve(self.matrix, flat).T  # (k, 2)
        uv = np.mod(uv, 1.0)
        return uv.reshape(v.shape + (2,))

    def lattice_residual(self, v) -> float:
        """Distance of v from the lattice (0 for lattice vectors)."""
        uv = self.to_unit(np.asarray([v]))[0]
        frac = np.minimum(uv, 1.0 - uv)
        return float(np.linalg.norm(self.matrix @ frac))


def _seg_point_dist(p, q, s):
    """Distance from s to the segment [p, q] in the complex plane."""
    d = q - p
    if d == 0:
        return abs(s - p)
    t = np.clip(((s - p) * np.conj(d)).real / abs(d) ** 2, 0.0, 1.0)
    return abs(s - (p + t * d))


def _segment_between_branch_points(params, e_from, e_to, order=48):
    """Integral of dz/y between two branch points, split at a midpoint.

    The connecting point is pushed sideways when the straight chord runs
    near the remaining branch point (both half-paths must stay clear for
    the tau^2 substitution's analyticity).
    """
    e_from, e_to = complex(e_from), complex(e_to)
    others = [complex(e) for e in params.finite_branch_zs if e not in (e_from, e_to)]
    zm = (e_from + e_to) / 2
    gap = abs(e_to - e_from)
    for bend in (0.0, 0.5, -0.5, 1.0, -1.0):
        cand = zm + 1j * bend * (e_to - e_from)
        clear = all(
            min(_seg_point_dist(e_from, cand, s), _seg_point_dist(e_to, cand, s)) > 0.1 * gap
            for s in others
        )
        if clear:
            zm = cand
            break
    else:
        raise AccuracyError("could not route the period segment around the third branch point")
    y_m = complex(np.sqrt(params.cubic(zm)))
    return _from_branch(params, e_from, zm, y_m, order) - _from_branch(params, e_to, zm, y_m, order)


def _loop_integral(params, center, radius, n=1024, z_start=None, y_start=None):
    """Trapezoid integral of dz/y around a circle, with sign continuation.

    Spectrally accurate for analytic integrands on closed curves; the sheet
    is anchored by ``y_start`` at ``z_start`` when given.  Returns
    ``(integral, y_returned)`` so callers can verify the sheet count.
    """
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    phase0 = np.angle(complex(z_start) - center) if z_start is not None else 0.0
    zs = center + radius * np.exp(1j * (t + phase0))
    dzs = 1j * radius * np.exp(1j * (t + phase0))
    roots = np.sqrt(params.cubic(zs))
    ys = np.empty_like(roots)
    y_run = complex(roots[0]) if y_start is None else complex(y_start)
    for j in range(n):
        y_run = complex(_continue_sign(np.array([roots[j]]), np.array([y_run]))[0])
        ys[j] = y_run
    y_back = complex(_continue_sign(np.array([roots[0]]), np.array([y_run]))[0])
    return complex(np.sum(dzs / ys) * (2 * np.pi / n)), y_back


def periods(params: CurveParams, order: int = 48) -> PeriodLattice:
    """Periods of dz/y on y^2 = z(z-a)(z-b) with built-in consistency checks.

    Two independent cycles are integrated as doubled branch-to-branch
    segments; the result must agree with itself at doubled quadrature
    order (1e-9 relative) and with a deformed closed-loop recomputation
    (1e-8 relative), else an accuracy error with diagnostics is raised.
    """
    e = params.finite_branch_zs
    w1 = 2 * _segment_between_branch_points(params, e[0], e[1], order)
    w2 = 2 * _segment_between_branch_points(params, e[1], e[2], order)

    w1_hi = 2 * _segment_between_branch_points(params, e[0], e[1], 2 * order)
    w2_hi = 2 * _segment_between_branch_points(params, e[1], e[2], 2 * order)
    for lo, hi, name in ((w1, w1_hi, "omega1"), (w2, w2_hi, "omega2")):
        if abs(lo - hi) > 1e-9 * max(1.0, abs(hi)):
            raise AccuracyError(f"{name} does not self-converge: {lo} vs {hi}")

    # deformed homologous loop around the first branch pair
    c0 = (e[0] + e[1]) / 2
    r_in = max(abs(e[0] - c0), abs(e[1] - c0))
    r_out = abs(e[2] - c0)
    if r_out <= r_in * 1.05:
        raise AccuracyError("branch points too clustered for the loop verification")
    loop, y_back = _loop_integral(params, c0, float(np.sqrt(r_in * r_out)))
    resid = min(abs(loop - w1_hi), abs(loop + w1_hi))
    if resid > 1e-8 * max(1.0, abs(w1_hi)):
        raise AccuracyError(
            f"loop deformation mismatch: loop={loop}, segment omega1={w1_hi}, residual={resid}"
        )

    # Lagrange-reduce the basis (shorter, near-orthogonal representatives)
    w1, w2 = w1_hi, w2_hi
    for _ in range(64):
        if abs(w2) < abs(w1):
            w1, w2 = w2, w1
        q = round((w2 / w1).real)
        if q == 0:
            break
        w2 = w2 - q * w1
    return PeriodLattice(w1, w2)


def base_point(params: CurveParams) -> complex:
    """Deterministic integration base: imaginary-axis point clear of branches."""
    scale = 1.0 + max(abs(params.a), abs(params.b))
    return 0.7724j * scale


def base_curve_point(params: CurveParams):
    """The cover point over the base whose uniformized image is exactly (0, 0)."""
    z0 = base_point(params)
    y0 = complex(np.sqrt(params.cubic(z0)))
    return (y0 / (z0 - params.b), z0)


def _odd_loop_integral(params, e, radius, z_start, y_start, order=96):
    """Integral of dz/y once around a single branch point e (sheet-swapping).

    The half-angle substitution z = e + rho e^(i(theta0 + 2 phi)) splits
    y = S(phi) F(phi) into the explicit root S of z - e and the analytic
    factor F = sqrt(P(z)/(z-e)), restoring spectral quadrature accuracy
    (the raw integrand is antiperiodic, where the trapezoid rule loses it).
    Returns ``(integral, y_end)`` with y_end = -y_start up to rounding.
    """
    e = complex(e)
    theta0 = np.angle(complex(z_start) - e)
    sqr = np.sqrt(radius)
    x, w = _gl(order)
    phis = np.pi * x
    F_run = complex(y_start) / complex(sqr * np.exp(1j * theta0 / 2))
    total = 0.0 + 0.0j
    for phi, wt in zip(phis, w):
        z = e + radius * np.exp(1j * (theta0 + 2 * phi))
        val = complex(np.sqrt(params.cubic(z) / (z - e)))
        F_run = val if abs(val - F_run) <= abs(val + F_run) else -val
        Sphi = sqr * np.exp(1j * (theta0 + 2 * phi) / 2)
        total += wt * np.pi * 2j * Sphi / F_run
    y_end = -complex(y_start)
    return total, y_end


_SWAP_CACHE: dict[tuple, complex] = {}


def sheet_swap_constant(params: CurveParams) -> complex:
    """Value c with AJ(involution(P)) = c - AJ(P): one odd loop from the base.

    Computed by encircling a single branch point, which lands the
    continuation on the opposite sheet over the base point.
    """
    key = (params.a, params.b)
    if key in _SWAP_CACHE:
        return _SWAP_CACHE[key]
    z0 = base_point(params)
    y0 = complex(np.sqrt(params.cubic(z0)))
    e = params.finite_branch_zs
    gaps = [min(abs(e[i] - e[j]) for j in range(3) if j != i) for i in range(3)]
    i0 = int(np.argmax(gaps))
    rad = 0.3 * gaps[i0]
    ring = complex(e[i0]) + rad * (z0 - e[i0]) / abs(z0 - e[i0])
    I1, y_ring = _segment_adaptive(params, z0, y0, ring)
    Iloop, y_after = _odd_loop_integral(params, complex(e[i0]), rad, ring, y_ring)
    Iloop_hi, _ = _odd_loop_integral(params, complex(e[i0]), rad, ring, y_ring, order=192)
    if abs(Iloop - Iloop_hi) > 1e-10 * max(1.0, abs(Iloop_hi)):
        raise AccuracyError("sheet-swap loop quadrature does not self-converge")
    I2, y_end = _segment_adaptive(params, ring, -y_ring, z0)
    if abs(y_end + y0) > 1e-6 * abs(y0):
        raise AccuracyError("swap-loop continuation did not land on the other sheet")
    c = I1 + Iloop_hi + I2
    _SWAP_CACHE[key] = c
    return c


def abel_jacobi(params: CurveParams, lat: PeriodLattice, point) -> np.ndarray:
    """Unit-square torus coordinates of a cover point ``(w, z)``.

    Integrates dz/y from the base point along a straight path (continued
    square root; automatic rerouting around branch points), then corrects
    by the sheet-swap constant when the continuation lands on the
    involuted sheet.
    """
    w, z = complex(point[0]), complex(point[1])
    z0 = base_point(params)
    y0 = complex(np.sqrt(params.cubic(z0)))
    y_target = w * (z - params.b)

    e = params.finite_branch_zs
    near = min(abs(z - ee) for ee in e)
    if near < 1e-9:
        ee = e[int(np.argmin([abs(z - x) for x in e]))]
        I = -_from_branch(params, ee, z0, y0)
        return lat.to_unit(np.asarray(I, dtype=complex))

    routes = [[], [0.5j * abs(z0)], [-0.5j * abs(z0)], [0.9 * z0 + 0.3], [0.9 * z0 - 0.3]]
    last_error = None
    for way in routes:
        try:
            t = 0.0 + 0.0j
            zc, yc = z0, y0
            for wp in way + [z]:
                I, yc = _segment_adaptive(params, zc, yc, complex(wp))
                t += I
                zc = complex(wp)
            if abs(y_target) > 1e-12 and abs(yc + y_target) < abs(yc - y_target):
                t = sheet_swap_constant(params) - t
            return lat.to_unit(np.asarray(t, dtype=complex))
        except PathError as exc:  # reroute
            last_error = exc
    raise PathError(f"all integration routes failed: {last_error}")


# ---------------------------------------------------------------------------
# sphere grid datum


def _sphere_grid(n_theta: int, n_phi: int):
    thetas = np.linspace(0.0, np.pi, n_theta)
    phis = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    dirs = np.stack(
        [np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1
    )
    return dirs.reshape(-1, 3), (n_theta, n_phi)


def _stereographic(dirs):
    """Complex chart from the north pole: the pole itself maps to infinity."""
    x, y, zc = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    denom = 1.0 - zc
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = (x + 1j * y) / denom
    zeta[denom < 1e-15] = np.inf
    return zeta


def _branch_directions(params):
    """Unit directions of the four ramification images (z = 0, a, b, inf)."""
    zs = [0.0 + 0.0j, params.a, params.b]
    dirs = []
    for z in zs:
        d = np.array([2 * z.real, 2 * z.imag, abs(z) ** 2 - 1.0]) / (abs(z) ** 2 + 1.0)
        dirs.append(d)
    dirs.append(np.array([0.0, 0.0, 1.0]))  # z = infinity
    return np.stack(dirs)


@dataclass
class BoundaryDatum:
    """Two-valued datum sampled on a sphere grid, with Lipschitz repair.

    ``pairs[s]`` holds the two sheet values at sample ``s`` in target
    coordinates (unit-square torus chart, or the plane for the control
    datum).  Within ``mollify_radius`` of each ramification image the
    sheets are blended radially toward the doubled image value, upgrading
    the raw C^{0,1/2} modulus to a Lipschitz one.
    """

    directions: np.ndarray  # (S, 3)
    pairs: np.ndarray  # (S, 2, 2)
    target_id: str
    grid_shape: tuple
    mollify_radius: float
    lipschitz: float
    params: CurveParams
    lattice: PeriodLattice | None = None
    swap_constant: complex | None = None
    branch_dirs: np.ndarray | None = None
    _tree: cKDTree | None = field(default=None, repr=False)

    @property
    def torus(self) -> bool:
        return self.target_id == "torus2"

    def evaluate_many(self, dirs) -> np.ndarray:
        dirs = np.asarray(dirs, dtype=float)
        if self._tree is None:
            self._tree = cKDTree(self.directions)
        idx = self._tree.query(dirs)[1]
        return self.pairs[idx]

    def as_boundary_function(self, center=None, radius: float = 1.0):
        """Datum as a position function for lattice boundary application."""
        center = np.zeros(3) if center is None else np.asarray(center, dtype=float)

        def g(xs):
            xs = np.atleast_2d(np.asarray(xs, dtype=float)) - center
            dirs = xs / np.linalg.norm(xs, axis=1, keepdims=True)
            return self.evaluate_many(dirs)

        return g


def _pair_metric(pairs_a, pairs_b, torus: bool):
    """Multiset distance between aligned 2-sheet samples, vectorized."""
    d_id = pairs_a - pairs_b
    d_sw = pairs_a - pairs_b[:, ::-1, :]
    if torus:
        d_id = wrap_diff(d_id)
        d_sw = wrap_diff(d_sw)
    c_id = np.einsum("ksn,ksn->k", d_id, d_id)
    c_sw = np.einsum("ksn,ksn->k", d_sw, d_sw)
    return np.sqrt(np.minimum(c_id, c_sw))


def _grid_edges(shape):
    n_theta, n_phi = shape

    def sid(i, j):
        return i * n_phi + (j % n_phi)

    edges = []
    for i in range(n_theta - 1):
        for j in range(n_phi):
            edges.append((sid(i, j), sid(i + 1, j)))
    for i in range(1, n_theta - 1):
        for j in range(n_phi):
            edges.append((sid(i, j), sid(i, j + 1)))
    return np.array(edges, dtype=np.int64)


def _march_values(params, zeta, shape, interior_mask):
    """BFS-march the continued integral of dz/y across the sphere grid.

    Processes frontier layers vectorized; edges whose continuation is
    flagged unstable fall back to the adaptive scalar integrator.
    Returns (t, y, reached).
    """
    S = zeta.size
    t = np.zeros(S, dtype=complex)
    y = np.zeros(S, dtype=complex)
    reached = np.zeros(S, dtype=bool)

    adj = [[] for _ in range(S)]
    for s0, s1 in _grid_edges(shape):
        adj[s0].append(s1)
        adj[s1].append(s0)

    e = params.finite_branch_zs
    finite = interior_mask & np.isfinite(zeta)
    dist_to_branch = np.full(S, np.inf)
    dist_to_branch[finite] = np.min(
        np.abs(zeta[finite, None] - e[None, :]), axis=1
    )
    mod = np.where(np.abs(zeta) < 4.0, dist_to_branch, 0.0)
    seed = int(np.argmax(mod))
    t[seed] = 0.0
    y[seed] = np.sqrt(params.cubic(zeta[seed]))
    reached[seed] = True

    frontier = [seed]
    while frontier:
        srcs, dsts = [], []
        seen = set()
        for s in frontier:
            for d in adj[s]:
                if not reached[d] and finite[d] and d not in seen:
                    seen.add(d)
                    srcs.append(s)
                    dsts.append(d)
        if not dsts:
            break
        srcs = np.array(srcs)
        dsts = np.array(dsts)
        I, y_end, ok = _layer_segment(params, zeta[srcs], y[srcs], zeta[dsts])
        for q in np.nonzero(~ok)[0]:
            try:
                I[q], y_end[q] = _segment_adaptive(params, zeta[srcs[q]], y[srcs[q]], zeta[dsts[q]])
                ok[q] = True
            except PathError:
                pass  # leave unreached; another parent may do better
        good = np.nonzero(ok)[0]
        t[dsts[good]] = t[srcs[good]] + I[good]
        y[dsts[good]] = y_end[good]
        reached[dsts[good]] = True
        frontier = list(dsts[good])
    return t, y, reached, seed


def _default_grid(mollify_radius: float):
    n_theta = int(np.ceil(np.pi / (mollify_radius / 4))) + 1
    return n_theta, 2 * (n_theta - 1)


def boundary_datum(
    params: CurveParams,
    lat: PeriodLattice,
    grid=None,
    mollify_radius: float = 2.0**-6,
) -> BoundaryDatum:
    """Two-valued torus datum on the sphere: sheets AJ(P), P over z(direction).

    The grid must resolve the mollification disks (>= 4 samples across).
    Sheets are {t, c - t} with t the continued integral and c the
    sheet-swap constant; both are reduced to the unit-square chart.  The
    doubled values at the four ramification images anchor the radial
    blending, and the identity 2 t = c (mod lattice) at those points is
    verified as a global consistency check.
    """
    n_theta, n_phi = grid if grid is not None else _default_grid(mollify_radius)
    step = max(np.pi / (n_theta - 1), 2 * np.pi / n_phi)
    if step > mollify_radius / 4 + 1e-15:
        raise UnderResolvedError(
            f"grid step {step:.4g} does not resolve mollify_radius {mollify_radius:.4g} (need >= 4 across)"
        )
    dirs, shape = _sphere_grid(n_theta, n_phi)
    zeta = _stereographic(dirs)
    interior = np.isfinite(zeta)

    t, y, reached, seed = _march_values(params, zeta, shape, interior)
    if reached.sum() < 0.99 * interior.sum():
        raise AccuracyError(f"marching reached only {reached.sum()} of {interior.sum()} samples")

    c = sheet_swap_constant(params)

    # ramification anchors, integrated directly from the base point
    branch_dirs = _branch_directions(params)
    z0 = base_point(params)
    y0 = complex(np.sqrt(params.cubic(z0)))
    anchors = [-_from_branch(params, e, z0, y0) for e in params.finite_branch_zs]
    anchors.append(_tail_to_infinity(params, z0, y0))
    for bi, tb in enumerate(anchors):
        resid = lat.lattice_residual(2 * tb - c)
        if resid > 1e-8 * max(1.0, abs(lat.omega1)):
            raise AccuracyError(
                f"ramification consistency 2t=c failed at branch {bi}: residual {resid:.3g}"
            )
    anchors_unit = lat.to_unit(np.asarray(anchors, dtype=complex))

    # anchor the march to the base point: add the uniformized value of the
    # seed's marched sheet, then verify path independence at spread probes
    I_seed, y_seed_direct = _segment_adaptive(params, z0, y0, zeta[seed])
    t_off = I_seed if abs(y_seed_direct - y[seed]) < abs(y_seed_direct + y[seed]) else c - I_seed
    t[reached] += t_off

    reached_ids = np.nonzero(reached)[0]
    e = params.finite_branch_zs
    probe_pool = reached_ids[
        (np.abs(zeta[reached_ids]) < 3.0)
        & (np.min(np.abs(zeta[reached_ids, None] - e[None, :]), axis=1) > 0.3)
    ]
    probes = probe_pool[:: max(1, probe_pool.size // 8)][:8]
    for s in probes:
        I_direct, y_direct = _segment_adaptive(params, z0, y0, zeta[s])
        if abs(y_direct + y[s]) < abs(y_direct - y[s]):
            I_direct = c - I_direct
        resid = lat.lattice_residual(t[s] - I_direct)
        if resid > 1e-6 * max(1.0, abs(lat.omega1)):
            raise AccuracyError(f"march disagrees with direct integral at probe: {resid:.3g}")

    pairs = np.zeros((dirs.shape[0], 2, 2))
    pairs[reached, 0, :] = lat.to_unit(t[reached])
    pairs[reached, 1, :] = lat.to_unit(c - t[reached])
    # unreached samples (the chart pole) take their ramification anchor value
    for s in np.nonzero(~reached)[0]:
        bi = int(np.argmin(np.linalg.norm(branch_dirs - dirs[s], axis=1)))
        pairs[s, :, :] = anchors_unit[bi]

    _mollify_pairs(pairs, dirs, branch_dirs, anchors_unit, mollify_radius, torus=True)
    lip = _lipschitz_estimate(pairs, dirs, shape, torus=True)
    return BoundaryDatum(
        directions=dirs,
        pairs=pairs,
        target_id="torus2",
        grid_shape=shape,
        mollify_radius=mollify_radius,
        lipschitz=lip,
        params=params,
        lattice=lat,
        swap_constant=c,
        branch_dirs=branch_dirs,
    )


def control_datum(
    params: CurveParams, grid=None, mollify_radius: float = 2.0**-6
) -> BoundaryDatum:
    """Planar two-valued datum from the same cover: sheets +/- w/(1+|w|^2).

    The odd bounded chart sends all four ramification fibers (w = 0 and
    w = infinity) to the doubled value 0, so the same radial blending
    yields a Lipschitz datum into the plane; the flat simply connected
    target is the control case where minimizers stay continuous.
    """
    n_theta, n_phi = grid if grid is not None else _default_grid(mollify_radius)
    step = max(np.pi / (n_theta - 1), 2 * np.pi / n_phi)
    if step > mollify_radius / 4 + 1e-15:
        raise UnderResolvedError(
            f"grid step {step:.4g} does not resolve mollify_radius {mollify_radius:.4g}"
        )
    dirs, shape = _sphere_grid(n_theta, n_phi)
    zeta = _stereographic(dirs)
    pairs = np.zeros((dirs.shape[0], 2, 2))
    finite = np.isfinite(zeta)
    ok = finite & (np.abs(zeta - params.b) > 1e-12)
    w = np.sqrt(params.rational(zeta[ok]))
    g = w / (1.0 + np.abs(w) ** 2)
    pairs[ok, 0, 0], pairs[ok, 0, 1] = g.real, g.imag
    pairs[ok, 1, :] = -pairs[ok, 0, :]
    branch_dirs = _branch_directions(params)
    anchors = np.zeros((4, 2))
    _mollify_pairs(pairs, dirs, branch_dirs, anchors, mollify_radius, torus=False)
    lip = _lipschitz_estimate(pairs, dirs, shape, torus=False)
    return BoundaryDatum(
        directions=dirs,
        pairs=pairs,
        target_id="euclidean:2",
        grid_shape=shape,
        mollify_radius=mollify_radius,
        lipschitz=lip,
        params=params,
        branch_dirs=branch_dirs,
    )


def _mollify_pairs(pairs, dirs, branch_dirs, anchor_values, radius, torus):
    for bi, bdir in enumerate(branch_dirs):
        d = np.linalg.norm(dirs - bdir, axis=1)
        mask = d < radius
        if not mask.any():
            continue
        omega = (d[mask] / radius)[:, None, None]
        anchor = np.asarray(anchor_values[bi])[None, None, :]
        diff = pairs[mask] - anchor
        if torus:
            diff = wrap_diff(diff)
        blended = anchor + omega * diff
        pairs[mask] = np.mod(blended, 1.0) if torus else blended


def _lipschitz_estimate(pairs, dirs, shape, torus):
    edges = _grid_edges(shape)
    a, b = edges[:, 0], edges[:, 1]
    gd = _pair_metric(pairs[a], pairs[b], torus)
    step = np.linalg.norm(dirs[a] - dirs[b], axis=1)
    ok = step > 1e-12
    return float(np.max(gd[ok] / step[ok])) if ok.any() else 0.0


# ---------------------------------------------------------------------------
# degree of the two-valued datum


def degree(datum: BoundaryDatum) -> int:
    """Signed covering number: summed sheet Jacobian areas over the sphere grid.

    Sheets are aligned across each grid triangle by nearest matching;
    chart differences take shortest torus representatives.  The total is
    divided by the unit torus area and rounded, rejecting results too far
    from an integer.
    """
    if not datum.torus:
        raise DomainError("degree is defined for the torus-valued datum")
    n_theta, n_phi = datum.grid_shape
    pairs = datum.pairs

    def sid(i, j):
        return i * n_phi + (j % n_phi)

    total = 0.0
    for i in range(n_theta - 1):
        j = np.arange(n_phi)
        quads = np.stack(
            [sid(i, j), sid(i + 1, j), sid(i + 1, j + 1), sid(i, j + 1)], axis=1
        )
        for tri in (quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]):
            p0, p1, p2 = pairs[tri[:, 0]], pairs[tri[:, 1]], pairs[tri[:, 2]]
            total += _triangle_area_sum(p0, p1, p2)
    resid = abs(total - round(total))
    if resid > 0.1:
        raise UnreliableDegreeError(
            f"degree integral {total:.4f} too far from an integer", residual=resid
        )
    return int(round(total))


def _triangle_area_sum(p0, p1, p2):
    """Both sheets' signed chart areas for batched triangles (torus wraps)."""
    # align sheets of p1 and p2 with those of p0 by smaller wrap distance
    def align(p, ref):
        d_id = wrap_diff(p - ref)
        d_sw = wrap_diff(p[:, ::-1, :] - ref)
        c_id = np.einsum("ksn,ksn->k", d_id, d_id)
        c_sw = np.einsum("ksn,ksn->k", d_sw, d_sw)
        swap = c_sw < c_id
        out = np.where(swap[:, None, None], p[:, ::-1, :], p)
        return out

    p1a = align(p1, p0)
    p2a = align(p2, p0)
    d1 = wrap_diff(p1a - p0)
    d2 = wrap_diff(p2a - p0)
    cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]  # (k, 2)
    return float(0.5 * cross.sum())
