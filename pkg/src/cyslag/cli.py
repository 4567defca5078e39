"""Command-line front end.

Subcommands: cartan, verify, evolve, fibration, run.
Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .ansatz import NotPositiveDefinite, structure_residuals
from .cartan import cartan_report
from .evolve import (ConstraintViolation, ResidualCeilingExceeded, evolve, state_derivatives,
                     trajectory_residuals)
from .fibration import fibration_geometry, fiber_volume, mclean_metric, period_matrix, semiflat_volume
from .scenario import (ExpressionError, ScenarioError, fmt, initial_state, parse_scenario,
                       with_overrides, write_csv, write_snapshot)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

SCAN_COLUMNS = ("t1", "t2", "y", "phi", "vol", "G11", "G12", "G13", "G22", "G23", "G33",
                "P31", "P32", "P33")


class StageError(Exception):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ScenarioError, ConstraintViolation, ResidualCeilingExceeded, NotPositiveDefinite,
            np.linalg.LinAlgError, ValueError, OSError) as exc:
        raise StageError(name, exc) from exc


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _load(args):
    cfg = _stage("parse", parse_scenario, args.scenario)
    if getattr(args, "tol", None) is not None:
        cfg = with_overrides(cfg, residual_ceiling=args.tol)
    return cfg


def _evolve(cfg, check=True):
    state = _stage("initial", initial_state, cfg)
    return _stage("evolve", evolve, state, cfg.evolution_config(), check=check)


# pipelines ----------------------------------------------------------------------------


def residual_summary(traj, cfg) -> dict:
    summary = trajectory_residuals(traj, cfg.evolution_config())
    ceiling = cfg.tolerances.residual_ceiling
    return {
        "equations": summary["equations"],
        "hitchin": summary["hitchin"],
        "constraint": summary["constraint"],
        "worst": summary["worst"],
        "worst_t": summary["worst_t"],
        "states_checked": summary["checked"],
        "ceiling": ceiling,
        "passed": summary["worst"] <= ceiling,
    }


def residual_field_rows(traj):
    """Per-node residual fields of the last state with t-derivatives."""
    derivs = state_derivatives(traj)
    n = max(derivs)
    state = traj.states[n]
    fields = structure_residuals(state, derivs[n])
    names = sorted(fields)
    xx, yy = state.grid.mesh()
    cols = [xx.ravel(), yy.ravel()] + [np.abs(fields[k]).ravel() for k in names]
    return ["x", "y"] + names, np.stack(cols, axis=1), traj.points[n]


def snapshot_name(t) -> str:
    return "state_" + "_".join(f"t{i + 1}_{v:.8f}" for i, v in enumerate(t)) + ".csv"


def write_snapshots(traj, out_dir: Path, every: int) -> list[dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    last = len(traj) - 1
    for i, (t, state) in enumerate(zip(traj.points, traj.states)):
        if i % every and i != last:
            continue
        name = snapshot_name(t)
        write_snapshot(out_dir / name, state)
        written.append({"t": list(t), "file": name})
    return written


def _base_state(traj, t1, t2):
    return traj.interpolate((t1, t2))


def phi_scan(traj, points) -> list[tuple]:
    rows = []
    for t1, t2, y in points:
        state = _stage("fibration", _base_state, traj, t1, t2)
        G = mclean_metric(state, y)
        P = period_matrix(state, y)
        rows.append((t1, t2, y, semiflat_volume(state, y), fiber_volume(state, y),
                     G[0, 0], G[0, 1], G[0, 2], G[1, 1], G[1, 2], G[2, 2], P[2, 0], P[2, 1], P[2, 2]))
    return rows


def geometry_dump(traj, point) -> dict:
    t1, t2, y = point
    state = _stage("fibration", _base_state, traj, t1, t2)
    geo = fibration_geometry(state, y)
    d = geo.to_dict()
    d["period_one_forms"] = geo.P.tolist()
    return d


def _sha256(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _inputs(cfg, scenario_path):
    paths = [scenario_path]
    if cfg.initial.table:
        paths.append(cfg.base_dir / cfg.initial.table)
    return {"scenario": str(scenario_path), "sha256": _sha256(paths)}


def run(cfg, scenario_path, out_dir, threads=None) -> dict:
    """Execute every requested output of the scenario into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings, artifacts = {}, []
    manifest = {"name": cfg.name, "tool": "cyslag", "version": __version__,
                "python": platform.python_version(), "numpy": np.__version__,
                "threads": threads, "inputs": _inputs(cfg, scenario_path)}
    t0 = time.perf_counter()
    traj = _evolve(cfg, check=True)
    timings["evolve"] = time.perf_counter() - t0
    manifest["grid"] = {"kappa": cfg.grid.kappa, "Nx": cfg.grid.Nx, "y_min": cfg.grid.y_min,
                        "y_max": cfg.grid.y_max, "Ny": cfg.grid.Ny}
    manifest["t_points"] = [list(p) for p in traj.points]
    manifest["t1_nodes"] = list(map(float, traj.t1_nodes))

    if cfg.outputs.snapshots:
        t0 = time.perf_counter()
        snaps = write_snapshots(traj, out_dir / "snapshots", cfg.outputs.snapshot_every)
        timings["snapshots"] = time.perf_counter() - t0
        artifacts += ["snapshots/" + s["file"] for s in snaps]
        manifest["snapshots"] = snaps

    if cfg.outputs.residual_report:
        t0 = time.perf_counter()
        report = _stage("verify", residual_summary, traj, cfg)
        (out_dir / "residuals.json").write_text(_json(report))
        timings["verify"] = time.perf_counter() - t0
        manifest["residuals"] = report
        artifacts.append("residuals.json")

    points = cfg.scan_points()
    if points:
        t0 = time.perf_counter()
        rows = phi_scan(traj, points)
        write_csv(out_dir / "phi_scan.csv", SCAN_COLUMNS, rows)
        phis = [r[3] for r in rows]
        manifest["phi_scan"] = {"points": len(rows), "phi_min": min(phis), "phi_max": max(phis),
                                "phi_range": max(phis) - min(phis)}
        timings["fibration"] = time.perf_counter() - t0
        artifacts.append("phi_scan.csv")

    for k, point in enumerate(cfg.outputs.geometry):
        name = f"geometry_{k}.json"
        (out_dir / name).write_text(_json(geometry_dump(traj, point)))
        artifacts.append(name)

    manifest["timings_s"] = timings
    manifest["artifacts"] = artifacts
    (out_dir / "manifest.json").write_text(_json(manifest))
    return manifest


# subcommands --------------------------------------------------------------------------


def cmd_cartan(args):
    report = cartan_report(args.n)
    if args.csv:
        keys = list(report["levels"][0])
        lines = [",".join(keys)] + [",".join(str(r[k]) for k in keys) for r in report["levels"]]
        text = "\n".join(lines) + "\n"
    else:
        text = _json(report)
    _emit(text, args.out)
    return EXIT_OK


def cmd_verify(args):
    cfg = _load(args)
    traj = _evolve(cfg, check=False)
    report = _stage("verify", residual_summary, traj, cfg)
    if args.csv:
        header, rows, t = residual_field_rows(traj)
        lines = [",".join(header)] + [",".join(fmt(v) for v in r) for r in rows]
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(_json(report), args.out)
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


def cmd_evolve(args):
    cfg = _load(args)
    out = Path(args.out)
    traj = _evolve(cfg, check=True)
    snaps = write_snapshots(traj, out, cfg.outputs.snapshot_every)
    manifest = {
        "name": cfg.name,
        "version": __version__,
        "inputs": _inputs(cfg, args.scenario),
        "grid": {"kappa": cfg.grid.kappa, "Nx": cfg.grid.Nx, "y_min": cfg.grid.y_min,
                 "y_max": cfg.grid.y_max, "Ny": cfg.grid.Ny},
        "t_points": [list(p) for p in traj.points],
        "snapshots": snaps,
        "residuals": _stage("verify", residual_summary, traj, cfg),
    }
    (out / "manifest.json").write_text(_json(manifest))
    return EXIT_OK


def cmd_fibration(args):
    cfg = _load(args)
    traj = _evolve(cfg, check=True)
    if args.geometry:
        point = tuple(float(v) for v in args.geometry.split(","))
        if len(point) != 3:
            raise StageError("parse", ValueError("--geometry expects t1,t2,y"))
        _emit(_json(geometry_dump(traj, point)), args.out)
        return EXIT_OK
    points = cfg.scan_points()
    if args.scan:
        axes = {a.strip() for a in args.scan.split(",")}
        bad = axes - {"t1", "t2", "y"}
        if bad:
            raise StageError("parse", ValueError(f"unknown scan axes {sorted(bad)}"))
        first = points[0] if points else (0.0, 0.0, cfg.grid.y_min)
        points = sorted({tuple(p[i] if name in axes else first[i] for i, name in enumerate(("t1", "t2", "y")))
                         for p in points})
    if not points:
        raise StageError("parse", ValueError("no outputs.phi_scan in scenario"))
    rows = phi_scan(traj, points)
    if args.json:
        _emit(_json([dict(zip(SCAN_COLUMNS, r)) for r in rows]), args.out)
    elif args.out:
        write_csv(args.out, SCAN_COLUMNS, rows)
    else:
        lines = [",".join(SCAN_COLUMNS)] + [",".join(fmt(v) for v in r) for r in rows]
        _emit("\n".join(lines) + "\n", None)
    return EXIT_OK


def cmd_run(args):
    cfg = _load(args)
    manifest = run(cfg, args.scenario, args.out, args.threads)
    print(f"wrote {len(manifest['artifacts'])} artifacts to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyslag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cyslag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True, out_required=False):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario TOML file")
        p.add_argument("--out", required=out_required, help="output file or directory")
        p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        p.add_argument("--tol", type=float, default=None, help="override the residual ceiling")
        fmt_group = p.add_mutually_exclusive_group()
        fmt_group.add_argument("--csv", action="store_true", help="emit CSV")
        fmt_group.add_argument("--json", action="store_true", help="emit JSON (default)")

    p = sub.add_parser("cartan", help="polar-space dimension counts")
    p.add_argument("--n", type=int, default=3, help="complex dimension")
    common(p, scenario=False)
    p.set_defaults(func=cmd_cartan)

    p = sub.add_parser("verify", help="residual report for an evolved scenario")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evolve", help="integrate a scenario and write snapshots")
    common(p, out_required=True)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("fibration", help="semi-flat volume scan or geometry dump")
    common(p)
    p.add_argument("--scan", help="comma-separated axes to vary (t1,t2,y)")
    p.add_argument("--geometry", help="dump the geometry at t1,t2,y as JSON")
    p.set_defaults(func=cmd_fibration)

    p = sub.add_parser("run", help="execute every output requested by a scenario")
    common(p, out_required=True)
    p.set_defaults(func=cmd_run)
    return parser


def _limits(threads):
    if not threads:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def _classify(exc) -> int:
    if isinstance(exc, (ConstraintViolation, ResidualCeilingExceeded, NotPositiveDefinite,
                        np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ScenarioError, ExpressionError, ValueError, KeyError)):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be ≥ 1")
    try:
        with _limits(args.threads):
            return args.func(args)
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        if isinstance(err.exc, ScenarioError):
            for line in err.exc.errors:
                print(f"  - {line}", file=sys.stderr)
        return _classify(err.exc)
    except (ConstraintViolation, ResidualCeilingExceeded, NotPositiveDefinite, KeyError,
            ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _classify(exc)


if __name__ == "__main__":
    sys.exit(main())
