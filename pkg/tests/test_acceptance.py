"""Acceptance suite: one check per shipped guarantee, one printed line each.

Heavy artifacts (minimizer ladders, the counterexample pipeline) come from
session fixtures in conftest.py and are shared across criteria.
"""

import itertools
import json
import time

import numpy as np
import pytest
import yaml
from scipy.optimize import linear_sum_assignment

from qharmlab import betareif as B
from qharmlab import cli
from qharmlab import jacobi as J
from qharmlab import lattice as L
from qharmlab import monotone as M
from qharmlab import qspace as QS
from qharmlab import scenarios as SC
from qharmlab import strata as ST
from qharmlab import targets as T


def _report(num, name, ok, detail):
    line = f"ACCEPTANCE {num:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------


def test_criterion_01_matching_oracle():
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        Q = int(rng.integers(2, 7))
        N = int(rng.integers(1, 4))
        a = rng.standard_normal((Q, N))
        b = rng.standard_normal((Q, N))
        diff = a[:, None, :] - b[None, :, :]
        cost = np.einsum("ijk,ijk->ij", diff, diff)
        rows, cols = linear_sum_assignment(cost)
        assignment_cost = float(np.sum(cost[np.arange(Q), cols[np.argsort(rows)]]))
        perms = np.array(list(itertools.permutations(range(Q))))
        exhaustive_cost = float(np.min(cost[np.arange(Q), perms].sum(axis=1)))
        if assignment_cost != exhaustive_cost:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    _report(
        1,
        "assignment matching equals exhaustive enumeration",
        mismatches == 0 and elapsed < 5.0,
        f"{mismatches} mismatches in 1000 pairs, {elapsed:.2f}s",
    )


def test_criterion_02_sqrt2_energy(sqrt2_ladder):
    _, reports = sqrt2_ladder
    oracle = 2 * np.pi
    rels = {n: abs(reports[n].final_energy - oracle) / oracle for n in (16, 32, 64)}
    ok = rels[64] < 0.05 and rels[32] < rels[16] and rels[64] < rels[32]
    _report(
        2,
        "two-valued sqrt minimizer energy vs 2*pi",
        ok,
        "relative errors " + ", ".join(f"1/{n}: {rels[n]:.4f}" for n in (16, 32, 64)),
    )


def test_criterion_03_monotonicity(kernel, sqrt2_ladder, torus3_bundle):
    sq_fields, _ = sqrt2_ladder
    blocks = {}
    for tag, u in [("sqrt2-16", sq_fields[16]), ("sqrt2-32", sq_fields[32]), ("sqrt2-64", sq_fields[64]),
                   ("torus-16", torus3_bundle["fields"][16]), ("torus-32", torus3_bundle["fields"][32])]:
        blocks[tag] = SC._monotonicity_block(u, kernel)
    bound_ok = all(b["worst_normalized"] >= -2.0 for b in blocks.values())

    def shrinks(coarse, fine):
        wc, wf = abs(blocks[coarse]["worst_raw"]), abs(blocks[fine]["worst_raw"])
        return wf <= wc / 1.5 + 1e-15

    shrink_ok = shrinks("sqrt2-16", "sqrt2-32") and shrinks("sqrt2-32", "sqrt2-64") and shrinks(
        "torus-16", "torus-32"
    )
    detail = ", ".join(f"{k}: norm {v['worst_normalized']:.3f} raw {v['worst_raw']:.2e}" for k, v in blocks.items())
    _report(3, "theta increments bounded below by -C h (local energy)", bound_ok and shrink_ok, detail)


def test_criterion_04_hedgehog_theta(kernel, hedgehog64):
    u = hedgehog64
    t0 = time.perf_counter()
    density = u.energy_density()
    oracle = 8 * np.pi / 3
    v1 = M.theta(u, kernel, np.zeros(3), 1.0, density)
    v2 = M.theta(u, kernel, np.zeros(3), 0.5, density)
    elapsed = time.perf_counter() - t0
    rel = abs(v1 - oracle) / oracle
    drift = abs(v1 - v2) / oracle
    ok = rel < 0.03 and drift < 0.02 and elapsed < 30.0
    _report(
        4,
        "hedgehog theta = 8*pi/3, scale independent",
        ok,
        f"theta(0,1)={v1:.4f} rel={rel:.4f}, dyadic drift={drift:.4f}, {elapsed:.1f}s",
    )


def test_criterion_05_lambda_lemma():
    rng = np.random.default_rng(7)
    dom = L.ball_domain(2, 1.0 / 6, 3.2)
    t0 = time.perf_counter()
    violations = 0
    for _ in range(1000):
        Q = int(rng.integers(1, 4))
        vals = rng.standard_normal((dom.n_nodes, Q, 2))
        u = L.QField(dom, T.euclidean(2), vals)
        n_atoms = int(rng.integers(2, 6))
        atoms = rng.uniform(-0.7, 0.7, size=(n_atoms, 2))
        w = rng.random(n_atoms) + 0.1
        mu = B.DiscreteMeasure(atoms, w / w.sum())
        moments = u.moments()
        # measure second-moment eigenstructure
        xm = (mu.weights[:, None] * mu.atoms).sum(axis=0)
        d = mu.atoms - xm
        R = np.einsum("p,pi,pj->ij", mu.weights, d, d)
        lam, vec = np.linalg.eigh(R)
        lam, vec = lam[::-1], vec[:, ::-1]
        idx = dom.nodes_in_ball(np.zeros(2), 1.0)
        hm = dom.h**2
        int_P = sum(
            w_a * M.radial_quantity_P(u, y, 2.0, moments) for y, w_a in zip(mu.atoms, mu.weights)
        )
        for j in range(2):
            lhs = lam[j] * float(np.einsum("i,kij,j->", vec[:, j], moments[idx], vec[:, j])) * hm
            if lhs > 2**2 * int_P + 1e-9 * max(1.0, lhs):
                violations += 1
    elapsed = time.perf_counter() - t0
    _report(
        5,
        "eigenvalue radial-energy bound on random fields",
        violations == 0 and elapsed < 120.0,
        f"{violations} violations in 1000 trials, {elapsed:.1f}s",
    )


def test_criterion_06_best_plane_theorem():
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    violations = 0
    checked = 0
    dom = L.ball_domain(2, 1.0 / 6, 3.2)
    while checked < 100:
        A = rng.standard_normal((2, 2)) + 1.2 * np.eye(2)
        vals = (dom.positions @ A.T)[:, None, :]
        noise = 0.1 * rng.standard_normal(vals.shape)
        u = L.QField(dom, T.euclidean(2), vals + noise)
        atoms = rng.uniform(-0.8, 0.8, size=(int(rng.integers(3, 7)), 2))
        mu = B.DiscreteMeasure(atoms, np.ones(atoms.shape[0]))
        k = 0
        lam = np.sort(np.linalg.eigvalsh(L.directional_energy_matrix(u, np.zeros(2), 1.0).matrix))
        eps = 0.9 * float(lam[: k + 1].sum())
        if eps <= 0:
            continue
        rep = B.best_plane_inequality_check(u, mu, np.zeros(2), 1.0, k=k, eps=eps)
        checked += 1
        if rep.main_ratio > 1.0 + 1e-9:
            violations += 1
    elapsed = time.perf_counter() - t0
    _report(
        6,
        "flatness bounded by radial energy under the direction-energy floor",
        violations == 0 and elapsed < 120.0,
        f"{violations} violations in {checked} synthetic fields, {elapsed:.1f}s",
    )


def test_criterion_07_beta_numbers():
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    eigen_viol = 0
    # eigen value never above any sampled plane objective
    for _ in range(10):
        P = int(rng.integers(5, 15))
        mu = B.DiscreteMeasure(rng.standard_normal((P, 2)), rng.random(P) + 0.1)
        D, plane = B.beta_number(mu, np.zeros(2), 1.5, 1)
        mask = mu.restrict_mask(np.zeros(2), 1.5)
        if not mask.any():
            continue
        xm = np.average(mu.atoms[mask], axis=0, weights=mu.weights[mask])
        for _ in range(100):
            v = rng.standard_normal(2)
            basis = (v / np.linalg.norm(v))[None, :]
            pl = B.AffinePlane(xm, basis)
            val = float(np.dot(mu.weights[mask], pl.distance(mu.atoms[mask]) ** 2)) * 1.5 ** (-3)
            if D > val + 1e-10:
                eigen_viol += 1

    # planar configuration: sampled minimum (plane fit included) matches
    planar_ok = True
    for _ in range(10):
        t = rng.standard_normal(8)
        direction = rng.standard_normal(2)
        direction /= np.linalg.norm(direction)
        mu = B.DiscreteMeasure(np.outer(t, direction), np.ones(8))
        D, plane = B.beta_number(mu, np.zeros(2), 3.0, 1)
        mask = mu.restrict_mask(np.zeros(2), 3.0)
        xm = np.average(mu.atoms[mask], axis=0, weights=mu.weights[mask])
        best = min(
            float(np.dot(mu.weights[mask], B.AffinePlane(xm, (v / np.linalg.norm(v))[None, :]).distance(mu.atoms[mask]) ** 2)) * 3.0 ** (-3)
            for v in [rng.standard_normal(2) for _ in range(50)] + [plane.basis[0]]
        )
        if abs(D - best) > 1e-6:
            planar_ok = False

    doubling_viol = 0
    mu = B.DiscreteMeasure(rng.standard_normal((25, 2)), rng.random(25) + 0.1)
    for _ in range(1000):
        x = rng.standard_normal(2)
        r = 0.3 + rng.random()
        y = x + rng.uniform(-1, 1, 2) * r / 2
        if np.linalg.norm(x - y) > r:
            continue
        d_small, _ = B.beta_number(mu, x, r, 1)
        d_big, _ = B.beta_number(mu, y, 2 * r, 1)
        if d_small > 2**3 * d_big + 1e-10 * max(1.0, d_small):
            doubling_viol += 1
    elapsed = time.perf_counter() - t0
    _report(
        7,
        "flatness-number eigen formula and doubling bound",
        eigen_viol == 0 and planar_ok and doubling_viol == 0 and elapsed < 60.0,
        f"eigen viol {eigen_viol}, planar match {planar_ok}, doubling viol {doubling_viol}, {elapsed:.1f}s",
    )


def test_criterion_08_reifenberg_checker():
    t0 = time.perf_counter()
    xs = np.linspace(-0.9, 0.9, 10)
    centers = np.stack([xs, np.zeros(10)], axis=1)
    radii = np.full(10, 0.5)
    flat = B.reifenberg_verdict(centers, radii, k=1, delta_R=0.01)

    rng = np.random.default_rng(10)
    perm = rng.permutation(10)
    flat_perm = B.reifenberg_verdict(centers[perm], radii[perm], k=1, delta_R=0.01)
    stable = abs(flat.packing_sum - flat_perm.packing_sum) <= 0.05 * flat.packing_sum

    g = np.linspace(-0.8, 0.8, 7)
    gx, gy = np.meshgrid(g, g)
    disk = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    disk = disk[np.linalg.norm(disk, axis=1) <= 0.85]
    filled = B.reifenberg_verdict(disk, np.full(disk.shape[0], 0.26), k=1, delta_R=0.01)
    elapsed = time.perf_counter() - t0
    ok = flat.holds and flat.worst_ratio == 0.0 and (not filled.holds) and stable and elapsed < 60.0
    _report(
        8,
        "Carleson hypothesis separates flat from disk-filling collections",
        ok,
        f"flat holds={flat.holds} (integrand {flat.worst_ratio:.1e}), disk holds={filled.holds}, "
        f"packing stable={stable}, {elapsed:.1f}s",
    )


def test_criterion_09_counterexample_pipeline(kernel, torus3_bundle, control_bundle):
    params, lat = torus3_bundle["params"], torus3_bundle["lat"]
    datum = torus3_bundle["datum"]
    deg = J.degree(datum)
    nt, nf = datum.grid_shape
    finer = J.boundary_datum(params, lat, grid=(2 * (nt - 1) + 1, 2 * nf), mollify_radius=datum.mollify_radius)
    deg_fine = J.degree(finer)
    degree_ok = deg in (-1, 1) and deg_fine == deg

    eps0 = 0.2
    proxies = {}
    interior_ok = True
    for n in (16, 32):
        u = torus3_bundle["fields"][n]
        prox = ST.singular_proxy(u, kernel, eps0, r_min=4 * u.domain.h, r_max=0.45)
        proxies[n] = u.domain.positions[prox]
        if prox.size == 0 or u.domain.boundary_distances()[prox].min() <= 0.1:
            interior_ok = False

    tol = 2.0 / 16
    if proxies[16].size and proxies[32].size:
        d01 = max(np.min(np.linalg.norm(proxies[32] - q, axis=1)) for q in proxies[16])
        d10 = max(np.min(np.linalg.norm(proxies[16] - q, axis=1)) for q in proxies[32])
        persist_ok = max(d01, d10) <= tol
        hausdorff = max(d01, d10)
    else:
        persist_ok, hausdorff = False, np.inf

    control_ok = True
    for n in (16, 32):
        u = control_bundle["fields"][n]
        if ST.singular_proxy(u, kernel, eps0, r_min=4 * u.domain.h, r_max=0.45).size:
            control_ok = False

    ok = degree_ok and interior_ok and persist_ok and control_ok
    _report(
        9,
        "torus counterexample singular, control regular",
        ok,
        f"degree={deg}/{deg_fine}, proxy sizes {len(proxies[16])}/{len(proxies[32])}, "
        f"hausdorff {hausdorff:.3f} <= {tol}, control empty={control_ok}",
    )


def test_criterion_10_minkowski_slopes(kernel, torus3_bundle):
    u = torus3_bundle["fields"][32]
    prox = ST.singular_proxy(u, kernel, 0.2, r_min=4 * u.domain.h, r_max=0.45)
    table = ST.minkowski_estimate(u.domain, prox, ST.dyadic_scales(2 * u.domain.h, 0.4))
    slope_points = table.slope

    dom = L.ball_domain(3, 1.0 / 16, 1.0)
    axis = np.nonzero(
        (np.linalg.norm(dom.positions[:, :2], axis=1) < 1e-9) & (np.abs(dom.positions[:, 2]) <= 0.5)
    )[0]
    table_axis = ST.minkowski_estimate(dom, axis, ST.dyadic_scales(2 * dom.h, 0.4))
    ok = slope_points is not None and slope_points >= 2.5 and abs(table_axis.slope - 2.0) <= 0.3
    _report(
        10,
        "Minkowski slopes: singular points ~3, synthetic axis ~2",
        ok,
        f"singular-set slope {slope_points:.2f} (>= 2.5), axis slope {table_axis.slope:.2f} (2 +- 0.3)",
    )


def test_criterion_11_determinism(tmp_path):
    cfg = {
        "schema": 1,
        "scenario": "sqrt2",
        "seed": 13,
        "out_dir": str(tmp_path / "runs"),
        "resolutions": [8, 16],
        "solver": {"max_sweeps": 1200, "tol": 1.0e-9},
    }
    path = tmp_path / "cfg.yaml"
    with open(path, "w") as f:
        yaml.safe_dump(cfg, f)
    assert cli.main(["run", str(path)]) == 0
    assert cli.main(["run", str(path)]) == 0
    a = (tmp_path / "runs" / "sqrt2-000" / "report.json").read_bytes()
    b = (tmp_path / "runs" / "sqrt2-001" / "report.json").read_bytes()
    snaps_equal = all(
        (tmp_path / "runs" / "sqrt2-000" / f"{n}.qfield").read_bytes()
        == (tmp_path / "runs" / "sqrt2-001" / f"{n}.qfield").read_bytes()
        for n in (8, 16)
    )
    _report(
        11,
        "equal seeds give byte-identical reports",
        a == b and snaps_equal,
        f"report bytes equal={a == b}, snapshots equal={snaps_equal}",
    )
