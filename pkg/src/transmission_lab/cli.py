"""``transmission-lab`` command-line front end.

Exit codes: 0 success, 1 verification failure, 2 bad input (config, CSV,
suite name), 3 solver non-convergence (or a failed sweep run).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, sweep_points
from .diagnostics import run_diagnostics
from .discretization import read_field_csv, write_field_csv
from .errors import InvalidInputError, NonConvergenceError, TransmissionLabError
from .solver import SolveResult, solve
from .verify import SUITES, run_suite, write_results

log = logging.getLogger("transmission_lab")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2, 3
WORKERS_ENV = "TRANSMISSION_LAB_WORKERS"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(directory: Path, cfg_hash: str, started: float, stages: dict) -> None:
    """List every file under ``directory`` (manifest included) with run metadata."""
    directory = Path(directory)
    files = sorted(str(p.relative_to(directory)) for p in directory.rglob("*") if p.is_file())
    if "manifest.json" not in files:
        files = sorted(files + ["manifest.json"])
    _write_json(directory / "manifest.json", {
        "config_hash": cfg_hash,
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 6),
        "stages": stages,
        "files": files,
    })


def _oracle_error(cfg: ExperimentConfig, res: SolveResult) -> float:
    orc = cfg.oracle()
    if orc is None:
        return math.nan
    return float(np.abs(res.u.values - orc(cfg.grid.points())).max())


def run_solve(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    """Solve, then write ``field.csv``, ``result.json`` and any requested diagnostics."""
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.problem()
    stages = {}
    try:
        res = solve(p, cfg.solver)
        code = EXIT_OK
        stages["solve"] = "converged"
    except NonConvergenceError as exc:
        res = exc.result
        code = EXIT_NONCONVERGED
        stages["solve"] = "nonconverged"
        log.warning("%s", exc)
    write_field_csv(res.u, out / "field.csv")
    summary = res.summary()
    err = _oracle_error(cfg, res)
    summary["max_oracle_error"] = None if math.isnan(err) else err
    _write_json(out / "result.json", summary)
    if cfg.diagnostics:
        F1, F2 = cfg.operators()
        run_diagnostics(res.u, cfg.diagnostics, F1, F2, p.zero_band).write(out)
        stages["diagnostics"] = "ok"
    return code, {"stages": stages, "summary": summary}


def cmd_solve(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    out = cfg.output_dir
    code, info = run_solve(cfg, out)
    write_manifest(out, cfg.config_hash(), started, info["stages"])
    print(json.dumps(info["summary"], sort_keys=True))
    return code


def cmd_diagnose(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    u = read_field_csv(args.field, cfg.grid)
    F1, F2 = cfg.operators()
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rep = run_diagnostics(u, cfg.diagnostics, F1, F2, cfg.problem().zero_band)
    rep.write(out)
    write_manifest(out, cfg.config_hash(), started, {"diagnostics": "ok"})
    print(rep.to_json())
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {sorted(SUITES)}", file=sys.stderr)
        return EXIT_INPUT
    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    if args.output_dir:
        write_results(results, args.output_dir)
    return EXIT_OK if ok else EXIT_FAIL


def raw_width(raw: dict) -> float:
    g = raw.get("grid", {})
    lo, hi = np.ravel(g.get("lower", -1.0))[0], np.ravel(g.get("upper", 1.0))[0]
    return float(hi - lo)


def _sweep_one(job):
    idx, point, raw, root = job
    from .config import parse_config

    out = Path(root) / f"run_{idx:03d}"
    try:
        cfg = parse_config(raw).with_overrides(**point)
        code, info = run_solve(cfg, out)
    except TransmissionLabError as exc:
        log.warning("sweep run %d failed: %s", idx, exc)
        n = point["nodes_per_axis"]
        h = math.nan if n is None else (raw_width(raw) / (n - 1) if n > 1 else math.nan)
        return idx, point, EXIT_NONCONVERGED, {"error": str(exc)}, h
    return idx, point, code, info["summary"], cfg.grid.h


def worker_count(cfg: ExperimentConfig) -> int:
    n = cfg.workers
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InvalidInputError(f"{WORKERS_ENV} must be an integer") from None
    return n


SWEEP_COLUMNS = ["run", "nodes_per_axis", "h", "C0", "variant", "status", "converged",
                 "outer_iters", "residual", "max_error", "order"]


def cmd_sweep(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    points = sweep_points(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, pt, cfg.raw, str(out)) for i, pt in enumerate(points)]
    n = worker_count(cfg)
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    rows, prev = [], {}
    for idx, point, code, summary, h in results:
        variant = json.dumps(point["operators"], sort_keys=True) if point["operators"] else ""
        err = summary.get("max_oracle_error")
        err = math.nan if err is None else err
        key = (variant, point["C0"])
        order = math.nan
        if key in prev and code == EXIT_OK:
            h0, e0 = prev[key]
            if e0 > 0 and err > 0 and h0 != h:
                order = math.log(e0 / err) / math.log(h0 / h)
        if code == EXIT_OK:
            prev[key] = (h, err)
        rows.append([idx, point["nodes_per_axis"] or cfg.grid.n[0], h,
                     "" if point["C0"] is None else point["C0"], variant,
                     "ok" if code == EXIT_OK else "failed", summary.get("converged", False),
                     summary.get("outer_iters", ""), summary.get("residual", ""), err, order])
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([("%.17g" % v) if isinstance(v, float) else v for v in row])
    failed = sum(r[2] != EXIT_OK for r in results)
    write_manifest(out, cfg.config_hash(), started,
                   {"sweep": "ok" if not failed else f"{failed} failed", "runs": len(results)})
    print(f"{len(results)} runs, {failed} failed; table in {out / 'sweep.csv'}")
    return EXIT_NONCONVERGED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transmission-lab",
                                     description="Sign-switching elliptic solver and diagnostics.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve the configured problem")
    p.add_argument("config")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("diagnose", help="run diagnostics on a field dump")
    p.add_argument("field")
    p.add_argument("config")
    p.set_defaults(func=cmd_diagnose)
    p = sub.add_parser("verify", help="run an acceptance suite")
    p.add_argument("suite", help=f"one of {sorted(SUITES)}")
    p.add_argument("output_dir", nargs="?", help="write results.json/results.csv here")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TransmissionLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
