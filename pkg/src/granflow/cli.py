"""Command-line entry point.

    granflow simulate --config run.toml --out outdir
    granflow verify --out outdir
    granflow scenarios [--only name,...] --out outdir

Exit codes: 0 success, 1 a property or oracle failed, 2 configuration or
usage error, 3 solver failure. ``GRANFLOW_NUM_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys

from .analysis import EnergyMonitor
from .config import ConfigError, ConfigParseError, initial_fields, load_config, sim_config_to_dict, config_hash
from .io import OutputManifest, write_json, write_timeseries_csv, write_vtk
from .scenarios import builtin_scenarios, run_scenario
from .solver import SolverError, simulate

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _thread_limit():
    value = os.environ.get("GRANFLOW_NUM_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(value)))


def _err(msg):
    print(f"granflow: {msg}", file=sys.stderr)


def cmd_simulate(config_path, out_dir) -> int:
    try:
        loaded = load_config(config_path)
    except ConfigParseError as exc:
        _err(f"config parse error: {exc}")
        return EXIT_CONFIG
    except ConfigError as exc:
        _err(f"config validation error in {config_path}: {exc}")
        return EXIT_CONFIG
    cfg = loaded.sim
    canon = loaded.canonical
    run_id = canon["output"]["run_id"] or loaded.digest[:12]
    os.makedirs(out_dir, exist_ok=True)
    manifest = OutputManifest(run_id, loaded.digest)
    monitor = EnergyMonitor()
    observers = [monitor]
    every = canon["output"]["snapshot_every"]
    write_snap = canon["output"]["write_vtk"]
    if write_snap and every > 0:
        def snapshot(k, prev, new, c):
            if (k + 1) % every == 0:
                path = os.path.join(out_dir, f"field_{k + 1:06d}.vtk")
                write_vtk(path, new, c)
                manifest.add(path, "field_vtk")
        observers.append(snapshot)
    v0, pf0 = initial_fields(canon, cfg.grid)
    try:
        state = simulate(cfg, v0, pf0, observers=observers)
    except SolverError as exc:
        _err(f"solver error at step {exc.step}: {exc}")
        return EXIT_SOLVER
    ts = os.path.join(out_dir, "timeseries.csv")
    write_timeseries_csv(ts, monitor.rows)
    manifest.add(ts, "timeseries_csv")
    if write_snap:
        final = os.path.join(out_dir, "field_final.vtk")
        write_vtk(final, state, cfg)
        manifest.add(final, "field_vtk")
    echo = os.path.join(out_dir, "config.json")
    write_json(echo, canon)
    manifest.add(echo, "report_json")
    manifest.write(os.path.join(out_dir, "manifest.json"))
    return EXIT_OK


def cmd_verify(out_dir, inject_fault=None, quick=False) -> int:
    from .verification import run_suite
    os.makedirs(out_dir, exist_ok=True)
    try:
        checks = run_suite(fault=inject_fault, quick=quick)
    except SolverError as exc:
        _err(f"solver error during verification: {exc}")
        return EXIT_SOLVER
    failing = [c for c in checks if not c.passed]
    write_json(os.path.join(out_dir, "verify_report.json"), {
        "passed": not failing,
        "first_failure": failing[0].name if failing else None,
        "checks": [{"name": c.name, "passed": c.passed, "value": c.value, "threshold": c.threshold}
                   for c in checks],
    })
    for c in checks:
        print(c.line())
    if failing:
        _err(f"property failed: {failing[0].name}")
        return EXIT_FAIL
    return EXIT_OK


def cmd_scenarios(names, out_dir) -> int:
    available = {s.name: s for s in builtin_scenarios()}
    selected = list(available) if not names else names
    unknown = [n for n in selected if n not in available]
    if unknown:
        _err(f"unknown scenario(s): {', '.join(unknown)}; available: {', '.join(available)}")
        return EXIT_CONFIG
    status = EXIT_OK
    for name in selected:
        s = available[name]
        sub = os.path.join(out_dir, name)
        os.makedirs(sub, exist_ok=True)
        canon = sim_config_to_dict(s.cfg, s.initial_v, s.initial_pf, run_id=name)
        digest = config_hash(canon)
        try:
            state, result = run_scenario(s)
        except SolverError as exc:
            _err(str(exc))
            return EXIT_SOLVER
        manifest = OutputManifest(name, digest)
        ts = os.path.join(sub, "timeseries.csv")
        write_timeseries_csv(ts, result.rows)
        manifest.add(ts, "timeseries_csv")
        vtk = os.path.join(sub, "field_final.vtk")
        write_vtk(vtk, state, s.cfg)
        manifest.add(vtk, "field_vtk")
        report = os.path.join(sub, "report.json")
        write_json(report, {"scenario": name, "passed": result.passed, "warnings": result.warnings,
                            "checks": [{"name": c.name, "passed": c.passed, "value": c.value,
                                        "threshold": c.threshold} for c in result.checks]})
        manifest.add(report, "report_json")
        echo = os.path.join(sub, "config.json")
        write_json(echo, canon)
        manifest.add(echo, "report_json")
        manifest.write(os.path.join(sub, "manifest.json"))
        print(f"{'PASS' if result.passed else 'FAIL'} {name}")
        for c in result.checks:
            print("    " + c.line())
        if not result.passed:
            status = EXIT_FAIL
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="granflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run one configured simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--out", required=True)
    p.add_argument("--quick", action="store_true", help="smaller samples and grids")
    p.add_argument("--inject-fault", choices=["plastic-sign"], help=argparse.SUPPRESS)
    p = sub.add_parser("scenarios", help="run builtin scenarios")
    p.add_argument("--only", default="", help="comma-separated scenario names")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    with _thread_limit():
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out)
        if args.command == "verify":
            return cmd_verify(args.out, args.inject_fault, args.quick)
        names = [n.strip() for n in args.only.split(",") if n.strip()]
        return cmd_scenarios(names, args.out)


if __name__ == "__main__":
    sys.exit(main())
