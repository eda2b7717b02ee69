"""Backend dispatch for the lattice hot loops.

The environment variable ``QHARMLAB_BACKEND`` selects the implementation:

* ``numba`` -- jitted kernels (default when numba imports);
* ``numpy`` -- pure-numpy fallback, identical results to rounding error.

Multiplicities above 6 always route to the numpy path, whose assignment
solver avoids enumerating Q! permutations.  ``benchmarks/bench_kernels.py``
compares the two paths.
"""

from __future__ import annotations

import itertools
import os
import warnings

import numpy as np

from . import numpy_backend

_ENV = "QHARMLAB_BACKEND"
_BRUTE_MAX_Q = 6

_requested = os.environ.get(_ENV, "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(f"{_ENV} must be 'numba' or 'numpy', got {_requested!r}")

_numba_backend = None
if _requested in ("", "numba"):
    try:
        from . import numba_backend as _numba_backend
    except ImportError:
        if _requested == "numba":
            raise
        warnings.warn("numba unavailable; falling back to pure-numpy kernels")

_active = _numba_backend if _numba_backend is not None else numpy_backend


def backend_name() -> str:
    return "numba" if _active is not None and _active is _numba_backend else "numpy"


_PERM_CACHE: dict[int, np.ndarray] = {}


def perm_table(Q: int):
    """All permutations of range(Q) in lexicographic order, or None for Q > 6."""
    if Q > _BRUTE_MAX_Q:
        return None
    tab = _PERM_CACHE.get(Q)
    if tab is None:
        tab = np.array(list(itertools.permutations(range(Q))), dtype=np.int64)
        tab.setflags(write=False)
        _PERM_CACHE[Q] = tab
    return tab


def _impl(perms):
    # the jitted path needs the explicit permutation table
    if perms is None:
        return numpy_backend
    return _active


def all_matchings(values, nbr, perms, kind):
    return _impl(perms).all_matchings(values, nbr, perms, kind)


def matched_costs(values, nbr, match, kind):
    return _active.matched_costs(values, nbr, match, kind)


def moment_fields(values, nbr, match, kind, h):
    return _active.moment_fields(values, nbr, match, kind, h)


def sheet_derivatives(values, nbr, match, kind, h):
    return _active.sheet_derivatives(values, nbr, match, kind, h)


def sweep_color(values, nbr, match, perms, parity, interior, color, kind):
    return _impl(perms).sweep_color(values, nbr, match, perms, parity, interior, color, kind)
