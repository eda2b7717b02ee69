"""Backend equivalence: jitted kernels must reproduce the numpy path."""

import numpy as np
import pytest

from qharmlab import _kernels as K
from qharmlab import lattice as L
from qharmlab import targets as T
from qharmlab._kernels import numpy_backend

numba_backend = pytest.importorskip("qharmlab._kernels.numba_backend")


def _random_field(kind, seed):
    rng = np.random.default_rng(seed)
    target = {0: T.euclidean(2), 1: T.sphere(2), 2: T.torus2()}[kind]
    dom = L.ball_domain(2, 1.0 / 6, 1.0)
    Q = int(rng.integers(1, 4))
    vals = np.stack(
        [np.stack([T.random_point(target, rng) for _ in range(Q)]) for _ in range(dom.n_nodes)]
    )
    return dom, target, vals, Q


@pytest.mark.parametrize("kind", [0, 1, 2])
def test_matchings_costs_and_moments_agree(kind):
    dom, target, vals, Q = _random_field(kind, seed=kind)
    perms = K.perm_table(Q)
    m_np = numpy_backend.all_matchings(vals, dom.nbr, perms, kind)
    m_nb = numba_backend.all_matchings(vals, dom.nbr, perms, kind)
    assert np.array_equal(m_np, m_nb)  # lexicographic tie-breaking on both paths

    c_np = numpy_backend.matched_costs(vals, dom.nbr, m_np, kind)
    c_nb = numba_backend.matched_costs(vals, dom.nbr, m_np, kind)
    assert np.allclose(c_np, c_nb, atol=1e-13)

    M_np = numpy_backend.moment_fields(vals, dom.nbr, m_np, kind, dom.h)
    M_nb = numba_backend.moment_fields(vals, dom.nbr, m_np, kind, dom.h)
    assert np.allclose(M_np, M_nb, atol=1e-9)

    d_np = numpy_backend.sheet_derivatives(vals, dom.nbr, m_np, kind, dom.h)
    d_nb = numba_backend.sheet_derivatives(vals, dom.nbr, m_np, kind, dom.h)
    assert np.allclose(d_np, d_nb, atol=1e-12)


@pytest.mark.parametrize("kind", [0, 1, 2])
def test_sweeps_agree(kind):
    dom, target, vals, Q = _random_field(kind, seed=10 + kind)
    perms = K.perm_table(Q)
    match = numpy_backend.all_matchings(vals, dom.nbr, perms, kind)

    v1, m1 = vals.copy(), match.copy()
    v2, m2 = vals.copy(), match.copy()
    for color in (0, 1):
        numpy_backend.sweep_color(v1, dom.nbr, m1, perms, dom.parity, dom.interior, color, kind)
        numba_backend.sweep_color(v2, dom.nbr, m2, perms, dom.parity, dom.interior, color, kind)
    assert np.allclose(v1, v2, atol=1e-12)
    c1 = numpy_backend.matched_costs(v1, dom.nbr, m1, kind).sum()
    c2 = numpy_backend.matched_costs(v2, dom.nbr, m2, kind).sum()
    assert c1 == pytest.approx(c2, rel=1e-12)


def test_backend_dispatch_large_q_routes_to_numpy():
    assert K.perm_table(7) is None
    dom = L.ball_domain(1, 0.25, 1.0)
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((dom.n_nodes, 7, 2))
    match = K.all_matchings(vals, dom.nbr, None, 0)
    assert match.shape == (dom.n_nodes, 1, 7)
    # every stored row is a permutation
    assert all(sorted(row.tolist()) == list(range(7)) for row in match[dom.nbr[:, 0] >= 0, 0])
