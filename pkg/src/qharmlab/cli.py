"""Experiment runner CLI: ``qharmlab run|plots|verify``.

``run`` executes a scenario described by a YAML config (schema below),
writing an append-only run directory with a machine-readable report, field
snapshots and CSV plot data.  ``plots`` re-emits plot CSVs from a stored
run; ``verify`` re-checks invariants on stored snapshots.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 check failure.

Config schema (version 1)::

    schema: 1                  # required
    scenario: sqrt2 | torus3 | simply_connected_control | strata_sweep | reif_check
    seed: 7                    # int, default 0
    out_dir: runs              # default "runs"
    timestamps: false          # include wall-clock stamps in the report
    solver:                    # optional, forwarded to the relaxation
      max_sweeps: 100000
      tol: 1.0e-8
      shuffle_cadence: 10
      shuffle_prob: 0.05
    # scenario-specific keys (all optional, defaults in parentheses):
    resolutions: [16, 32]      # lattice ladder (sqrt2: [16,32,64])
    eps0: 0.15                 # singular-proxy energy threshold
    curve_a: 1.0               # branched-cover parameter a
    curve_b: -1.0              # branched-cover parameter b
    mollify_radius: 0.0625     # datum blending radius (sphere chart units)
    datum_grid: [257, 512]     # sphere grid; omit to derive from the radius
    covering: true             # build the ball covering (torus3)
    field: one_symmetric       # strata_sweep input (or a .qfield path)
    h: 0.0625                  # strata_sweep lattice spacing
    k: 1                       # strata_sweep / reif_check dimension
    eps: 0.1                   # strata_sweep symmetry threshold
    measure_file: balls.txt    # reif_check input: rows x1..xm radius
    delta_R: 0.01              # reif_check Carleson smallness level
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import lattice as L
from . import qspace as QS
from . import targets as T
from .errors import AccuracyError, ConfigError, NumericFailure, PathError, QHarmError
from .scenarios import SCENARIOS

_SOLVER_KEYS = {"max_sweeps": int, "tol": float, "shuffle_cadence": int, "shuffle_prob": float}
_TOP_KEYS = {
    "schema", "scenario", "seed", "out_dir", "timestamps", "solver",
    "resolutions", "eps0", "curve_a", "curve_b", "mollify_radius", "datum_grid",
    "covering", "covering_r_floor", "field", "h", "k", "eps", "r_min",
    "measure_file", "delta_R",
}


def load_config(path) -> dict:
    try:
        with open(path) as f:
            cfg = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError("file not found", path=str(path))
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", path=str(path))
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping", path=str(path))
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    if cfg.get("schema") != 1:
        raise ConfigError("schema must be 1", path="schema")
    for key in cfg:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}", path=key)
    scenario = cfg.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {sorted(SCENARIOS)}", path="scenario")
    cfg.setdefault("seed", 0)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer", path="seed")
    cfg.setdefault("out_dir", "runs")
    cfg.setdefault("timestamps", False)
    solver = cfg.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("solver must be a mapping", path="solver")
    for k, v in solver.items():
        if k not in _SOLVER_KEYS:
            raise ConfigError(f"unknown solver key {k!r}", path=f"solver.{k}")
        try:
            solver[k] = _SOLVER_KEYS[k](v)
        except (TypeError, ValueError):
            raise ConfigError(f"solver.{k} must be {_SOLVER_KEYS[k].__name__}", path=f"solver.{k}")
    if "resolutions" in cfg:
        rs = cfg["resolutions"]
        if not isinstance(rs, list) or not all(isinstance(r, int) and r > 1 for r in rs):
            raise ConfigError("resolutions must be a list of integers > 1", path="resolutions")
        if sorted(rs) != rs:
            raise ConfigError("resolutions must be ascending (coarse to fine)", path="resolutions")
    if "datum_grid" in cfg:
        g = cfg["datum_grid"]
        if not (isinstance(g, list) and len(g) == 2 and all(isinstance(x, int) and x > 8 for x in g)):
            raise ConfigError("datum_grid must be [n_theta, n_phi] integers", path="datum_grid")
    for key in ("eps0", "mollify_radius", "h", "eps", "r_min", "delta_R"):
        if key in cfg:
            try:
                cfg[key] = float(cfg[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be a number", path=key)
            if cfg[key] <= 0:
                raise ConfigError(f"{key} must be positive", path=key)
    return cfg


def _fresh_run_dir(out_dir: Path, scenario: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    i = 0
    while True:
        cand = out_dir / f"{scenario}-{i:03d}"
        if not cand.exists():
            cand.mkdir()
            return cand
        i += 1


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON-serializable: {type(o)}")


def _write_csv(path: Path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join("%.17g" % v if isinstance(v, float) else str(v) for v in row) + "\n")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    run_dir = _fresh_run_dir(Path(cfg["out_dir"]), cfg["scenario"])
    rng = np.random.default_rng(cfg["seed"])

    report, fields = SCENARIOS[cfg["scenario"]](cfg, rng)
    report["config"] = {k: v for k, v in sorted(cfg.items())}
    report["version"] = __version__
    report["backend"] = _backend_name()
    if cfg["timestamps"]:
        report["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")

    for name, u in (fields or {}).items():
        L.save_field(u, str(run_dir / f"{name}.qfield"))
    _emit_plot_csvs(run_dir, report)
    _write_json(run_dir / "report.json", report)
    with open(run_dir / "config.yaml", "w") as f:
        yaml.safe_dump(cfg, f, sort_keys=True)
    print(f"run written to {run_dir}")
    return 0


def _backend_name():
    from . import _kernels

    return _kernels.backend_name()


def _emit_plot_csvs(run_dir: Path, report: dict):
    if "profile_center" in report:
        _write_csv(
            run_dir / "theta_profile.csv",
            [f"x{i}" for i in range(len(report["profile_center"][0]) - 4)] + ["r", "theta", "pinch", "radial"],
            report["profile_center"],
        )
    mink = report.get("minkowski")
    if mink and mink.get("radii"):
        rows = list(zip(mink["radii"], mink["volumes"]))
        _write_csv(run_dir / "volume_table.csv", ["r", "volume"], rows)
    reps = report.get("symmetry_reports")
    if reps:
        m = len(reps[0]["eigenvalues"])
        rows = [
            tuple(r["center"]) + (r["radius"], r["pinch"]) + tuple(r["eigenvalues"])
            for r in reps
        ]
        _write_csv(
            run_dir / "spectra.csv",
            [f"x{i}" for i in range(len(reps[0]["center"]))] + ["r", "pinch"] + [f"lam{i}" for i in range(m)],
            rows,
        )


def cmd_plots(args) -> int:
    run_dir = Path(args.run_dir)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise ConfigError("no report.json in run directory", path=str(run_dir))
    report = json.loads(report_path.read_text())
    out = run_dir / "plots"
    out.mkdir(exist_ok=True)
    _emit_plot_csvs(out, report)

    # theta-vs-r curves recomputed from the stored snapshots
    from . import monotone as M
    from . import strata as STt

    kernel = M.default_kernel()
    for snap in sorted(run_dir.glob("*.qfield")):
        u = L.load_field(str(snap))
        center = np.zeros(u.domain.m)
        radii = [r for r in STt.dyadic_scales(4 * u.domain.h, 0.9) if u.domain.ball_fits(center, r)]
        prof = M.energy_profile(u, kernel, center, radii)
        _write_csv(
            out / f"{snap.stem}_theta.csv",
            [f"x{i}" for i in range(u.domain.m)] + ["r", "theta", "pinch", "radial"],
            list(prof.rows()),
        )
    print(f"plot data written to {out}")
    return 0


def cmd_verify(args) -> int:
    run_dir = Path(args.run_dir)
    report_path = run_dir / "report.json"
    failures = []
    if not report_path.exists():
        raise ConfigError("no report.json in run directory", path=str(run_dir))
    report = json.loads(report_path.read_text())
    level_energies = {
        name: lvl.get("energy")
        for name, lvl in (report.get("levels") or {}).items()
        if isinstance(lvl, dict)
    }
    rng = np.random.default_rng(0)
    for snap in sorted(run_dir.glob("*.qfield")):
        u = L.load_field(str(snap))
        err = u.on_target_error()
        if err > 1e-10:
            failures.append(f"{snap.name}: values leave the target by {err:.3g}")
        # stored pairings must be optimal: spot-check random edges
        nbr = u.domain.nbr
        cand = np.nonzero(nbr[:, 0::2].reshape(-1) >= 0)[0]
        picks = rng.choice(cand, size=min(200, cand.size), replace=False)
        for flat in picks:
            v, i = divmod(int(flat), u.domain.m)
            w = nbr[v, 2 * i]
            best = QS.best_matching(
                QS.QPoint(u.values[v]), QS.QPoint(u.values[w]), T.metric_fn(u.target)
            )
            stored = u.matchings[v, i]
            d = u.values[w][stored] - u.values[v]
            if u.target.kind == T.TORUS2:
                d = T.wrap_diff(d)
            stored_cost = float(np.sum(d * d))
            if stored_cost > best.cost + 1e-9 * (1.0 + best.cost):
                failures.append(
                    f"{snap.name}: stored pairing on edge ({v},{i}) costs {stored_cost:.6g} > optimal {best.cost:.6g}"
                )
                break
        # energies recorded in the report must match the snapshots
        level = snap.stem.split("_")[-1] if "_" in snap.stem else snap.stem
        if level in level_energies and level_energies[level] is not None:
            e = L.discrete_dirichlet_energy(u)
            if abs(e - level_energies[level]) > 1e-9 * (1.0 + abs(e)):
                failures.append(
                    f"{snap.name}: energy {e:.12g} != reported {level_energies[level]:.12g}"
                )
    for line in failures:
        print(f"FAIL {line}")
    if not failures:
        print(f"verify OK: {run_dir}")
    return 4 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qharmlab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a scenario config")
    p_run.add_argument("config")
    p_plots = sub.add_parser("plots", help="emit plot CSVs for a stored run")
    p_plots.add_argument("run_dir")
    p_verify = sub.add_parser("verify", help="re-check invariants on stored snapshots")
    p_verify.add_argument("run_dir")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "plots":
            return cmd_plots(args)
        return cmd_verify(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericFailure, AccuracyError, PathError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except QHarmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
