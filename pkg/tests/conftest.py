import numpy as np
import pytest

from qharmlab import jacobi as J
from qharmlab import lattice as L
from qharmlab import monotone as M
from qharmlab import scenarios as SC
from qharmlab import solver as S
from qharmlab import targets as T


@pytest.fixture(scope="session")
def kernel():
    return M.default_kernel()


@pytest.fixture(scope="session")
def sqrt2_ladder():
    """Converged two-valued square-root minimizers at h = 1/16, 1/32, 1/64."""
    fields, reports = SC.solve_ladder(
        lambda h: L.ball_domain(2, h, 1.0),
        T.euclidean(2),
        SC.sqrt_pair_datum,
        2,
        [16, 32, 64],
        S.SweepConfig(max_sweeps=60000, tol=1e-9, seed=7),
    )
    return fields, reports


@pytest.fixture(scope="session")
def curve_setup():
    params = J.CurveParams(1.0, -1.0)
    lat = J.periods(params)
    return params, lat


@pytest.fixture(scope="session")
def torus_datum(curve_setup):
    params, lat = curve_setup
    return J.boundary_datum(params, lat, grid=(257, 512), mollify_radius=2.0**-4)


@pytest.fixture(scope="session")
def torus3_bundle(curve_setup, torus_datum):
    """Counterexample minimizers at h = 1/16 and 1/32."""
    params, lat = curve_setup
    fields, reports = SC.solve_ladder(
        lambda h: L.ball_domain(3, h, 1.0),
        T.torus2(),
        torus_datum.as_boundary_function(),
        2,
        [16, 32],
        S.SweepConfig(max_sweeps=20000, tol=1e-9, seed=3),
    )
    return {"params": params, "lat": lat, "datum": torus_datum, "fields": fields, "reports": reports}


@pytest.fixture(scope="session")
def control_bundle(curve_setup):
    """Same pipeline into the plane (simply connected control)."""
    params, _ = curve_setup
    datum = J.control_datum(params, grid=(257, 512), mollify_radius=2.0**-4)
    fields, reports = SC.solve_ladder(
        lambda h: L.ball_domain(3, h, 1.0),
        T.euclidean(2),
        datum.as_boundary_function(),
        2,
        [16, 32],
        S.SweepConfig(max_sweeps=20000, tol=1e-9, seed=3),
    )
    return {"datum": datum, "fields": fields, "reports": reports}


@pytest.fixture(scope="session")
def hedgehog64():
    """x/|x| into the 2-sphere at h = 1/64 (large; built once)."""
    return SC.radial_sphere_field(1.0 / 64, radius=1.05)
