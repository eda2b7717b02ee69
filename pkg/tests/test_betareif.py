import numpy as np
import pytest

from qharmlab import betareif as B
from qharmlab import lattice as L
from qharmlab import monotone as M
from qharmlab import targets as T
from qharmlab.errors import DimensionMismatchError, DomainError, PreconditionError


def _random_measure(rng, P=12, m=2, spread=1.0):
    return B.DiscreteMeasure(spread * rng.standard_normal((P, m)), rng.random(P) + 0.1)


def _plane_objective(mu, x, r, k, base, basis):
    """Direct flatness objective of one candidate plane (oracle side)."""
    mask = mu.restrict_mask(x, r)
    if not mask.any():
        return 0.0
    plane = B.AffinePlane(base, basis)
    d = plane.distance(mu.atoms[mask])
    return float(np.dot(mu.weights[mask], d**2)) * float(r) ** (-(k + 2))


def test_beta_number_examples():
    # atoms on a line recover the line with zero flatness defect
    mu = B.DiscreteMeasure(np.array([[x, 2 * x] for x in np.linspace(-1, 1, 9)]), np.ones(9))
    D, plane = B.beta_number(mu, np.zeros(2), 1.5, 1)
    assert D == pytest.approx(0.0, abs=1e-14)
    direction = plane.basis[0] / np.linalg.norm(plane.basis[0])
    assert abs(abs(direction @ np.array([1.0, 2.0]) / np.sqrt(5))) == pytest.approx(1.0)

    # the symmetric cross: best line leaves residual 2, D = 2 / r^3 = 0.25
    mu = B.DiscreteMeasure(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float), np.ones(4))
    D, _ = B.beta_number(mu, np.zeros(2), 2.0, 1)
    assert D == pytest.approx(2.0 / 8.0)

    # single atom
    mu = B.DiscreteMeasure(np.array([[0.3, 0.4]]), np.array([2.0]))
    for k in (0, 1, 2):
        D, _ = B.beta_number(mu, np.zeros(2), 1.0, k)
        assert D == pytest.approx(0.0, abs=1e-15)

    with pytest.raises(DimensionMismatchError):
        B.beta_number(mu, np.zeros(2), 1.0, 3)


def test_beta_eigen_below_sampled_planes():
    rng = np.random.default_rng(0)
    for trial in range(20):
        mu = _random_measure(rng)
        x, r, k = np.zeros(2), 1.5, 1
        D, plane = B.beta_number(mu, x, r, k)
        mask = mu.restrict_mask(x, r)
        if not mask.any():
            continue
        xm = np.average(mu.atoms[mask], axis=0, weights=mu.weights[mask])
        for _ in range(50):
            v = rng.standard_normal(2)
            basis = (v / np.linalg.norm(v))[None, :]
            base = xm + 0.1 * rng.standard_normal(2) if rng.random() < 0.5 else xm
            assert D <= _plane_objective(mu, x, r, k, base, basis) + 1e-10
        # the eigen plane itself attains the value
        assert D == pytest.approx(_plane_objective(mu, x, r, k, plane.base, plane.basis), abs=1e-10)


def test_beta_scale_invariance():
    rng = np.random.default_rng(1)
    mu = _random_measure(rng, P=8)
    x, r, k = np.array([0.1, -0.2]), 1.2, 1
    D0, _ = B.beta_number(mu, x, r, k)
    s = 3.7
    mu_s = B.DiscreteMeasure(mu.atoms * s, mu.weights * s**k)
    D1, _ = B.beta_number(mu_s, x * s, r * s, k)
    assert D1 == pytest.approx(D0, rel=1e-12)


def test_beta_doubling_and_restriction():
    rng = np.random.default_rng(2)
    mu = _random_measure(rng, P=20)
    samples = []
    for _ in range(200):
        x = rng.standard_normal(2)
        r = 0.3 + rng.random()
        y = x + (rng.random() * r) * rng.standard_normal(2) / np.sqrt(2)
        if np.linalg.norm(x - y) <= r:
            samples.append((x, y, r))
    rep = B.beta_doubling_check(mu, samples, k=1, rng=rng)
    assert rep.ok, (rep.violations[:3], rep.restriction_violations[:3])


def test_carleson_integrand():
    # flat: zero at every center and radius
    mu = B.DiscreteMeasure(np.array([[x, 0.0] for x in np.linspace(-1, 1, 17)]), np.ones(17))
    assert B.carleson_integrand(mu, np.zeros(2), 1.0, 1) == pytest.approx(0.0, abs=1e-13)

    # circle: finite, monotone in the outer radius
    ang = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    circ = B.DiscreteMeasure(np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(40, 2 * np.pi / 40))
    v_half = B.carleson_integrand(circ, np.zeros(2), 0.5, 1)
    v_full = B.carleson_integrand(circ, np.zeros(2), 1.5, 1)
    assert 0 <= v_half <= v_full < np.inf

    single = B.DiscreteMeasure(np.array([[0.0, 0.0]]), np.array([1.0]))
    assert B.carleson_integrand(single, np.zeros(2), 1.0, 1) == 0.0


def test_reifenberg_verdict_line_passes_disk_fails():
    xs = np.linspace(-0.9, 0.9, 10)
    centers = np.stack([xs, np.zeros(10)], axis=1)
    radii = np.full(10, 0.5)
    rep = B.reifenberg_verdict(centers, radii, k=1, delta_R=0.01)
    assert rep.holds
    assert rep.worst_ratio == pytest.approx(0.0, abs=1e-12)
    assert rep.packing_sum == pytest.approx(10 * 0.5)

    # atom reordering leaves the verdict and packing identical
    perm = np.random.default_rng(0).permutation(10)
    rep2 = B.reifenberg_verdict(centers[perm], radii[perm], k=1, delta_R=0.01)
    assert rep2.holds == rep.holds
    assert rep2.packing_sum == pytest.approx(rep.packing_sum, rel=1e-12)

    # a 2-disk filling tested at k = 1 has order-one flatness defect
    g = np.linspace(-0.8, 0.8, 7)
    gx, gy = np.meshgrid(g, g)
    disk = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    keep = np.linalg.norm(disk, axis=1) <= 0.85
    disk = disk[keep]
    rad = np.full(disk.shape[0], 0.26)
    rep3 = B.reifenberg_verdict(disk, rad, k=1, delta_R=0.01)
    assert not rep3.holds

    # overlapping shrunk balls are rejected with the offending pair
    bad_centers = np.array([[0.0, 0.0], [0.001, 0.0]])
    with pytest.raises(PreconditionError):
        B.reifenberg_verdict(bad_centers, np.array([0.5, 0.5]), k=1)


def test_rectifiability_sums():
    mu = B.DiscreteMeasure(np.array([[x, 0.0] for x in np.linspace(-1, 1, 21)]), np.ones(21))
    out = B.rectifiability_sum(mu, k=1)
    assert out["max"] == pytest.approx(0.0, abs=1e-12)

    ang = np.linspace(0, np.pi, 30)
    arc = B.DiscreteMeasure(np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(30, 0.1))
    out_arc = B.rectifiability_sum(arc, k=1)
    assert np.all(out_arc["finite"])

    # polyline with a corner: the corner atom dominates the flat ones
    xs = np.linspace(0, 1, 10)
    leg1 = np.stack([xs[::-1], np.zeros(10)], axis=1)
    leg2 = np.stack([np.zeros(9), xs[1:]], axis=1)
    poly = B.DiscreteMeasure(np.vstack([leg1, leg2]), np.full(19, 0.1))
    out_poly = B.rectifiability_sum(poly, k=1)
    corner = int(np.argmin(np.linalg.norm(poly.atoms, axis=1)))
    flat = int(np.argmax(poly.atoms[:, 0]))
    assert np.all(out_poly["finite"])
    assert out_poly["per_atom"][corner] > out_poly["per_atom"][flat]


# ---------------------------------------------------------------------------
# best-plane inequality


def _linear_field(A, h=1.0 / 6, radius=3.2):
    dom = L.ball_domain(2, h, radius)
    vals = (dom.positions @ A.T)[:, None, :]
    return L.QField(dom, T.euclidean(A.shape[0]), vals)


def test_best_plane_precondition_error():
    dom = L.ball_domain(2, 1.0 / 6, 3.2)
    u = L.constant_field(dom, T.euclidean(2), [0.0, 0.0], Q=1)
    mu = B.DiscreteMeasure(np.array([[0.1, 0.0], [-0.1, 0.0]]), np.ones(2))
    with pytest.raises(PreconditionError):
        B.best_plane_inequality_check(u, mu, np.zeros(2), 1.0, k=0, eps=0.1)


def test_best_plane_inequality_on_linear_fields():
    rng = np.random.default_rng(3)
    for _ in range(25):
        A = rng.standard_normal((2, 2)) + 1.5 * np.eye(2)
        u = _linear_field(A)
        mu = B.DiscreteMeasure(0.8 * rng.standard_normal((6, 2)) / 3, rng.random(6) + 0.2)
        r = 1.0
        Mmat = L.directional_energy_matrix(u, np.zeros(2), r).matrix
        lam = np.sort(np.linalg.eigvalsh(Mmat))
        eps = 0.9 * float(lam[:1].sum())  # k+1 = 1 smallest eigenvalue
        if eps <= 0:
            continue
        rep = B.best_plane_inequality_check(u, mu, np.zeros(2), r, k=0, eps=eps)
        assert rep.main_ratio <= 1.0 + 1e-9
        assert all(t <= 1.0 + 1e-9 for t in rep.lambda_ratios)


def test_lambda_bound_on_random_fields():
    rng = np.random.default_rng(4)
    dom = L.ball_domain(2, 1.0 / 6, 3.2)
    for _ in range(50):
        vals = rng.standard_normal((dom.n_nodes, 2, 2))
        u = L.QField(dom, T.euclidean(2), vals)
        atoms = rng.standard_normal((5, 2)) * 0.3
        atoms = atoms[np.linalg.norm(atoms, axis=1) <= 1.0]
        if atoms.shape[0] == 0:
            continue
        mu = B.DiscreteMeasure(atoms, np.ones(atoms.shape[0]))
        try:
            rep = B.best_plane_inequality_check(u, mu, np.zeros(2), 1.0, k=0, eps=1e-6)
        except PreconditionError:
            continue
        assert all(t <= 1.0 + 1e-9 for t in rep.lambda_ratios)
