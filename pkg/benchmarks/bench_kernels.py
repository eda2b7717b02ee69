"""Timing comparison of the jitted and pure-numpy lattice kernels.

Runs the relaxation hot loops (half-sweeps, pairing refresh, moment
fields) on representative problem sizes with both backends and prints a
table of per-call times and speedups.

    python3 benchmarks/bench_kernels.py [--sizes 16 32] [--reps 20]

The numpy fallback is exercised directly (no env flag needed); set
``QHARMLAB_BACKEND=numpy`` to force the whole package onto it instead.
"""

import argparse
import time

import numpy as np

from qharmlab import _kernels as K
from qharmlab import lattice as L
from qharmlab import scenarios as SC
from qharmlab._kernels import numpy_backend

try:
    from qharmlab._kernels import numba_backend
except ImportError:
    numba_backend = None


def _time(fn, reps):
    fn()  # warm (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def bench_case(name, u, reps):
    dom = u.domain
    perms = K.perm_table(u.Q)
    rows = []

    def sweep(backend):
        vals, match = u.values.copy(), u.matchings.copy()

        def run():
            for color in (0, 1):
                backend.sweep_color(vals, dom.nbr, match, perms, dom.parity, dom.interior, color, u.target.kind)

        return run

    def rematch(backend):
        return lambda: backend.all_matchings(u.values, dom.nbr, perms, u.target.kind)

    def moments(backend):
        return lambda: backend.moment_fields(u.values, dom.nbr, u.matchings, u.target.kind, dom.h)

    for op_name, factory in (("sweep", sweep), ("rematch", rematch), ("moments", moments)):
        t_np = _time(factory(numpy_backend), reps)
        t_nb = _time(factory(numba_backend), reps) if numba_backend else float("nan")
        rows.append((name, op_name, dom.n_nodes, t_np, t_nb))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32])
    ap.add_argument("--reps", type=int, default=10)
    args = ap.parse_args()

    cases = []
    for n in args.sizes:
        cases.append((f"disk-sqrt Q=2 h=1/{n}", SC.sqrt_pair_field(1.0 / n)))
        cases.append((f"ball3 hedgehog Q=1 h=1/{n}", SC.radial_sphere_field(1.0 / n)))

    print(f"active backend: {K.backend_name()}   (numba available: {numba_backend is not None})")
    header = f"{'case':28s} {'op':8s} {'nodes':>8s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, u in cases:
        for case, op, nodes, t_np, t_nb in bench_case(name, u, args.reps):
            speed = t_np / t_nb if t_nb == t_nb and t_nb > 0 else float("nan")
            print(f"{case:28s} {op:8s} {nodes:8d} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms {speed:7.1f}x")


if __name__ == "__main__":
    main()
