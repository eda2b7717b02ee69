import numpy as np
import pytest

from qharmlab import targets as T
from qharmlab.errors import DomainError, ProjectionError


def test_projection_examples():
    s = T.sphere(2)
    assert np.allclose(T.project(s, [0.0, 0.0, 2.0]), [0, 0, 1])
    t = T.torus2()
    assert np.allclose(T.project(t, [1.25, -0.5]), [0.25, 0.5])
    e = T.euclidean(3)
    p = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(T.project(e, p), p)
    # idempotence
    q = T.project(s, [0.3, -0.2, 0.5])
    assert np.allclose(T.project(s, q), q)
    with pytest.raises(ProjectionError):
        T.project(s, [0.0, 0.0, 0.0])


def test_distance_examples():
    t = T.torus2()
    assert T.distance(t, [0.1, 0.0], [0.9, 0.0]) == pytest.approx(0.2)
    s = T.sphere(2)
    assert T.distance(s, [0, 0, 1.0], [0, 0, -1.0]) == pytest.approx(2.0)


def test_torus_distance_against_translate_oracle():
    t = T.torus2()
    rng = np.random.default_rng(0)
    shifts = np.array([(i, j) for i in range(-2, 3) for j in range(-2, 3)], dtype=float)
    for _ in range(200):
        p, q = rng.random(2), rng.random(2)
        oracle = min(np.linalg.norm(p - (q + s)) for s in shifts)
        assert T.distance(t, p, q) == pytest.approx(oracle, abs=1e-12)


def test_torus_distance_is_metric_and_bounded():
    t = T.torus2()
    rng = np.random.default_rng(1)
    for _ in range(500):
        p, q, r = rng.random(2), rng.random(2), rng.random(2)
        dpq = T.distance(t, p, q)
        assert dpq <= np.sqrt(2) / 2 + 1e-12
        assert abs(dpq - T.distance(t, q, p)) < 1e-14
        assert dpq <= T.distance(t, p, r) + T.distance(t, r, q) + 1e-12


def test_projection_lipschitz_near_sphere():
    s = T.sphere(2)
    rng = np.random.default_rng(2)
    for _ in range(500):
        p = T.random_point(s, rng) + 0.3 * (rng.random() * rng.standard_normal(3) / 3)
        q = T.random_point(s, rng) * (1 + 0.28 * (rng.random() - 0.5))
        if np.linalg.norm(p) < 0.7 or np.linalg.norm(q) < 0.7:
            continue
        dproj = np.linalg.norm(T.project(s, p) - T.project(s, q))
        # 1-Lipschitz within the tested tube up to the curvature factor
        assert dproj <= np.linalg.norm(p - q) / 0.7 + 1e-12


def test_second_fundamental_form():
    s = T.sphere(2)
    p = np.array([0.0, 0.0, 1.0])
    assert np.allclose(T.second_fundamental_form(s, p, [1.0, 0.0, 0.0]), [0, 0, -1.0])
    assert np.allclose(T.second_fundamental_form(s, p, [2.0, 0.0, 0.0]), -4.0 * p)
    assert np.allclose(T.second_fundamental_form(T.euclidean(2), [0.0, 0.0], [1.0, 2.0]), 0.0)
    assert np.allclose(T.second_fundamental_form(T.torus2(), [0.1, 0.2], [1.0, 2.0]), 0.0)
    with pytest.raises(DomainError):
        T.second_fundamental_form(s, p, [0.0, 0.0, 1.0])


def test_manifold_ids():
    for mid in ("euclidean:3", "sphere:2", "torus2"):
        assert T.from_id(mid).id == mid
    with pytest.raises(DomainError):
        T.from_id("klein:2")


def test_wrap_diff():
    assert np.allclose(T.wrap_diff([0.9, -0.9]), [-0.1, 0.1])
    assert np.allclose(T.wrap_diff([0.2, -0.3]), [0.2, -0.3])
