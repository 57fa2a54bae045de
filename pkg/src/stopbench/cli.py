"""Command-line front end.

Subcommands:

* ``run <scenario.cfg> [--seed N] [--runs K] [--out DIR]`` - execute one
  scenario's repetitions; writes per-run frame logs, JSON summaries,
  trajectory mirrors, figures, and an aggregate summary.
* ``matrix <matrix.cfg> [--jobs J] [--out DIR]`` - expand and execute a
  scenario matrix; writes per-run logs plus ``matrix.csv`` / ``matrix.md``
  and the aggregate figures.
* ``fidelity <sim.csv> <phys.csv>... [--hz HZ]`` - resample confidence
  traces onto a common grid and report per-trace correlation.
* ``profiles export <dir>`` - write the builtin detection profiles as
  editable config files.

``STOPBENCH_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .bridge import BridgeError
from .metrics import aggregate, pearson
from .planner_control import RunReport, run_closed_loop
from .report import (
    build_matrix_rows,
    matrix_markdown,
    run_id,
    run_summary,
    write_matrix,
    write_run,
)
from .scenario import Scenario, ScenarioError, expand_matrix, parse_matrix, parse_scenario
from .sensing import ProfileError, load_builtin_profiles, render_profile

UserError = (ScenarioError, ProfileError, BridgeError, OSError, ValueError)


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get("STOPBENCH_OUT") or "stopbench-out")


def _print_run_line(report: RunReport) -> None:
    sysm = report.system
    vd = sysm.violation_distance
    vd_s = "-" if vd is None else ("inf" if math.isinf(vd) else f"{vd:.2f} m")
    fmax = report.component.f_max_n
    print(
        f"  run {report.run_index:2d} [{run_id(report.scenario, report.run_index)}] "
        f"seed={report.seed} stopped={sysm.stopped} violated={sysm.violated} "
        f"violation_distance={vd_s} "
        f"f_max(50)={'-' if fmax is None else f'{100 * fmax:.1f}%'}"
        + (" INCOMPLETE" if report.incomplete else "")
    )


def cmd_run(args: argparse.Namespace) -> int:
    sc = parse_scenario(Path(args.scenario).read_text(encoding="utf-8"))
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    if args.runs is not None:
        sc = dataclasses.replace(sc, runs=args.runs)
    out = _out_dir(args.out)

    print(f"scenario: {sc.name or sc.default_name()} ({sc.runs} run(s), seed {sc.seed})")
    reports = []
    for i in range(sc.runs):
        report = run_closed_loop(sc, run_index=i, collect_trajectory=True)
        write_run(report, out)
        _print_run_line(report)
        reports.append(report)

    agg = aggregate(reports)
    agg_path = out / "aggregate.json"
    vd = agg.violation_distance
    agg_payload = {
        "version": __version__,
        "scenario": run_summary(reports[0])["scenario"],
        "runs": agg.runs,
        "complete_runs": agg.complete_runs,
        "stop_rate": agg.stop_rate,
        "violation_rate": agg.violation_rate,
        "violation_distance": ("inf" if vd is not None and math.isinf(vd) else vd),
        "infinite_violations": agg.infinite_violations,
        "f_succ": {str(int(c)): v for c, v in agg.f_succ.items()},
        "f_max_50": agg.f_max_n,
        "trip_time": agg.trip_time,
    }
    agg_path.write_text(json.dumps(agg_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(
        f"aggregate: stop_rate={100 * agg.stop_rate:.1f}% "
        f"violation_rate={100 * agg.violation_rate:.1f}% -> {agg_path}"
    )
    return 0 if all(not r.incomplete for r in reports) else 3


def _execute_one(payload: tuple[Scenario, int]) -> RunReport:
    sc, run_index = payload
    return run_closed_loop(sc, run_index=run_index)


def execute_matrix(
    scenarios: list[Scenario], jobs: int = 1
) -> list[tuple[Scenario, list[RunReport]]]:
    """Run every (combination, run) job; the merge is keyed by job index, so
    results are identical for any job count."""
    payloads = [(sc, i) for sc in scenarios for i in range(sc.runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute_one, payloads, chunksize=8))
    else:
        results = [_execute_one(p) for p in payloads]
    grouped: list[tuple[Scenario, list[RunReport]]] = []
    k = 0
    for sc in scenarios:
        grouped.append((sc, results[k:k + sc.runs]))
        k += sc.runs
    return grouped


def cmd_matrix(args: argparse.Namespace) -> int:
    matrix = parse_matrix(Path(args.matrix).read_text(encoding="utf-8"))
    scenarios = expand_matrix(matrix)
    out = _out_dir(args.out)
    total = sum(sc.runs for sc in scenarios)
    print(f"matrix {matrix.name}: {len(scenarios)} combinations x {matrix.runs} runs = {total} runs")

    grouped = execute_matrix(scenarios, jobs=args.jobs)
    for sc, reports in grouped:
        for report in reports:
            write_run(report, out, figures=False)

    rows = build_matrix_rows(grouped)
    paths = write_matrix(rows, out, name=matrix.name, base_seed=matrix.base_seed)
    print(matrix_markdown(rows, name=matrix.name))
    print(f"wrote {paths['csv']} and {paths['markdown']}")
    incomplete = sum(r.incomplete for _, reports in grouped for r in reports)
    if incomplete:
        print(f"warning: {incomplete} incomplete run(s)", file=sys.stderr)
        return 3
    return 0


def _load_trace(path: Path) -> list[tuple[float, float]]:
    """Read a (t, confidence) trace from a CSV; understands both bare
    two-column traces and run frame logs (columns picked by header name)."""
    rows = [
        line.strip()
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip() and not line.startswith("#")
    ]
    if not rows:
        raise ValueError(f"{path}: empty trace")
    header = [c.strip() for c in rows[0].split(",")]
    try:
        t_col, c_col = header.index("t"), header.index("confidence")
    except ValueError:
        raise ValueError(
            f"{path}: need 't' and 'confidence' columns, got {header}"
        ) from None
    samples = []
    for line in rows[1:]:
        cells = line.split(",")
        samples.append((float(cells[t_col]), float(cells[c_col])))
    if len(samples) < 2:
        raise ValueError(f"{path}: need at least 2 samples")
    return samples


def _interp_grid(
    samples: list[tuple[float, float]], grid: list[float]
) -> list[float]:
    out = []
    j = 0
    for t in grid:
        while j + 1 < len(samples) and samples[j + 1][0] < t:
            j += 1
        t0, v0 = samples[j]
        if t <= t0 or j + 1 >= len(samples):
            out.append(v0)
        else:
            t1, v1 = samples[j + 1]
            w = (t - t0) / (t1 - t0)
            out.append(v0 * (1.0 - w) + v1 * w)
    return out


def cmd_fidelity(args: argparse.Namespace) -> int:
    try:
        sim = _load_trace(Path(args.sim))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    step = 1.0 / args.hz
    results = []
    for name in args.phys:
        path = Path(name)
        try:
            phys = _load_trace(path)
            t0 = max(sim[0][0], phys[0][0])
            t1 = min(sim[-1][0], phys[-1][0])
            n = int(math.floor((t1 - t0) / step + 1e-9)) + 1
            if n < 3:
                raise ValueError(f"{path}: overlap too short ({n} grid points)")
            grid = [t0 + k * step for k in range(n)]
            rep = pearson(_interp_grid(sim, grid), _interp_grid(phys, grid))
            results.append((path.name, rep))
            print(f"{path.name}: r={rep.r:+.4f} p={rep.p:.3g} n_points={rep.n_points}")
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)

    if not results:
        print("error: no trace processed", file=sys.stderr)
        return 1
    rs = [rep.r for _, rep in results]
    print(
        f"summary: traces={len(rs)} mean_r={sum(rs) / len(rs):.4f} "
        f"min_r={min(rs):.4f} max_r={max(rs):.4f}"
    )
    return 0


def cmd_profiles(args: argparse.Namespace) -> int:
    if args.action != "export":
        print(f"error: unknown profiles action {args.action!r}", file=sys.stderr)
        return 2
    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, profile in sorted(load_builtin_profiles().items()):
        path = out / f"{name}.cfg"
        path.write_text(render_profile(profile), encoding="utf-8")
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stopbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stopbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--runs", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)

    p_matrix = sub.add_parser("matrix", help="expand and execute a matrix file")
    p_matrix.add_argument("matrix")
    p_matrix.add_argument("--jobs", type=int, default=1)
    p_matrix.add_argument("--out", default=None)
    p_matrix.set_defaults(func=cmd_matrix)

    p_fid = sub.add_parser("fidelity", help="correlate confidence traces")
    p_fid.add_argument("sim")
    p_fid.add_argument("phys", nargs="+")
    p_fid.add_argument("--hz", type=float, default=20.0)
    p_fid.set_defaults(func=cmd_fidelity)

    p_prof = sub.add_parser("profiles", help="builtin profile utilities")
    p_prof.add_argument("action", choices=["export"])
    p_prof.add_argument("dir")
    p_prof.set_defaults(func=cmd_profiles)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
