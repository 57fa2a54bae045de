"""Run and matrix outputs: delimited logs, JSON summaries, and figures.

Every output file embeds the tool version and the resolved configuration so
a report is reproducible from its own header. Frame logs are written with a
fixed column order and deterministic float formatting: two runs of the same
(scenario, seed) produce byte-identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from pathlib import Path
from typing import Sequence

from . import __version__
from .metrics import AggregateSummary, aggregate
from .planner_control import RunReport
from .scenario import Scenario

FRAME_COLUMNS = (
    "frame,t,s,speed,dist_sign,dist_line,present,confidence,detected,tracked,"
    "track_status,dist_est,target_speed,accel_cmd,steer_cmd,committed,fulfilled,alarm"
)
TRAJ_COLUMNS = "t,s,lateral,heading,speed,accel_cmd,steering_cmd"
MATRIX_COLUMNS = (
    "attack,pipeline,speed_mph,condition,runs,complete_runs,"
    "f_succ_lt10,f_succ_lt20,f_succ_lt30,f_max_50,"
    "stop_rate,violation_rate,violation_distance,infinite_violations,trip_time"
)


def _fmt(x: float) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.9g}"


def _opt(x: float | None) -> str:
    return "" if x is None else _fmt(x)


def scenario_dict(sc: Scenario) -> dict:
    d = dataclasses.asdict(sc)
    d["attack"] = sc.attack.render()
    d["pipeline_overrides"] = dict(sc.pipeline_overrides)
    return d


def run_id(sc: Scenario, run_index: int) -> str:
    """Stable run identifier derived from the full configuration."""
    blob = json.dumps(scenario_dict(sc), sort_keys=True) + f"#{run_index}"
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _header_lines(report: RunReport) -> list[str]:
    return [
        f"# stopbench {__version__}",
        f"# id={run_id(report.scenario, report.run_index)}",
        f"# seed={report.seed}",
        f"# scenario={json.dumps(scenario_dict(report.scenario), sort_keys=True)}",
        f"# config={json.dumps(dataclasses.asdict(report.config), sort_keys=True)}",
    ]


def frame_csv(report: RunReport) -> str:
    lines = _header_lines(report)
    lines.append(FRAME_COLUMNS)
    for r in report.frames:
        lines.append(
            ",".join(
                (
                    str(r.frame), _fmt(r.t), _fmt(r.s), _fmt(r.speed),
                    _fmt(r.dist_sign), _fmt(r.dist_line), _fmt(r.present),
                    _fmt(r.confidence), _fmt(r.detected), _fmt(r.tracked),
                    r.track_status, _fmt(r.dist_est), _fmt(r.target_speed),
                    _fmt(r.accel_cmd), _fmt(r.steer_cmd), _fmt(r.committed),
                    _fmt(r.fulfilled), _fmt(r.alarm),
                )
            )
        )
    return "\n".join(lines) + "\n"


def trajectory_csv(report: RunReport) -> str:
    if report.trajectory is None:
        raise ValueError("run was executed without trajectory collection")
    lines = _header_lines(report)
    lines.append(TRAJ_COLUMNS)
    for r in report.trajectory:
        lines.append(
            ",".join(
                (
                    _fmt(r.t), _fmt(r.s), _fmt(r.lateral), _fmt(r.heading),
                    _fmt(r.speed), _fmt(r.accel_cmd), _fmt(r.steering_cmd),
                )
            )
        )
    return "\n".join(lines) + "\n"


def _distance_json(x: float | None):
    if x is None:
        return None
    return "inf" if math.isinf(x) else x


def run_summary(report: RunReport) -> dict:
    return {
        "version": __version__,
        "id": run_id(report.scenario, report.run_index),
        "scenario": scenario_dict(report.scenario),
        "config": dataclasses.asdict(report.config),
        "seed": report.seed,
        "run_index": report.run_index,
        "incomplete": report.incomplete,
        "wall_time_s": report.wall_time,
        "alarms": report.alarms,
        "component": {
            "f_succ": {str(int(c)): v for c, v in report.component.f_succ.items()},
            "f_max_50": report.component.f_max_n,
            "window": report.component.n,
        },
        "system": {
            "stopped": report.system.stopped,
            "violated": report.system.violated,
            "violation_distance": _distance_json(report.system.violation_distance),
            "trip_time": report.system.trip_time,
        },
    }


def write_run(report: RunReport, out_dir: Path, *, figures: bool = True) -> dict[str, Path]:
    """Write one run's frame log, JSON summary, optional trajectory mirror,
    and figure; returns the written paths."""
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    rid = run_id(report.scenario, report.run_index)
    paths = {}

    csv_path = runs_dir / f"{rid}.csv"
    csv_path.write_text(frame_csv(report), encoding="utf-8")
    paths["csv"] = csv_path

    json_path = runs_dir / f"{rid}.json"
    summary = run_summary(report)
    summary["frame_log"] = csv_path.name
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["json"] = json_path

    if report.trajectory is not None:
        traj_path = runs_dir / f"{rid}.traj.csv"
        traj_path.write_text(trajectory_csv(report), encoding="utf-8")
        paths["trajectory"] = traj_path

    if figures:
        fig_path = runs_dir / f"{rid}.png"
        render_run_figure(report, fig_path)
        paths["figure"] = fig_path
    return paths


# ---------------------------------------------------------------------------
# matrix aggregation outputs

@dataclasses.dataclass(frozen=True)
class MatrixRow:
    scenario: Scenario
    summary: AggregateSummary


def build_matrix_rows(
    grouped: Sequence[tuple[Scenario, Sequence[RunReport]]]
) -> list[MatrixRow]:
    return [
        MatrixRow(scenario=sc, summary=aggregate(reports)) for sc, reports in grouped
    ]


def matrix_csv(rows: Sequence[MatrixRow], *, name: str, base_seed: int) -> str:
    lines = [
        f"# stopbench {__version__}",
        f"# matrix={name}",
        f"# base_seed={base_seed}",
        MATRIX_COLUMNS,
    ]
    for row in rows:
        sc, agg = row.scenario, row.summary
        lines.append(
            ",".join(
                (
                    sc.attack.render(), sc.pipeline, _fmt(sc.speed_mph), sc.condition,
                    str(agg.runs), str(agg.complete_runs),
                    _opt(agg.f_succ.get(10.0)), _opt(agg.f_succ.get(20.0)),
                    _opt(agg.f_succ.get(30.0)), _opt(agg.f_max_n),
                    _fmt(agg.stop_rate), _fmt(agg.violation_rate),
                    _opt(agg.violation_distance), str(agg.infinite_violations),
                    _opt(agg.trip_time),
                )
            )
        )
    return "\n".join(lines) + "\n"


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100.0 * x:.1f}%"


def _dist(x: float | None) -> str:
    if x is None:
        return "-"
    return "inf" if math.isinf(x) else f"{x:.1f} m"


def matrix_markdown(rows: Sequence[MatrixRow], *, name: str) -> str:
    lines = [
        f"# {name}",
        "",
        "| Attack | Pipeline | Speed (mph) | Condition | f_succ <10m | <20m | <30m "
        "| f_max(50) | Stop rate | Violation rate | Violation dist. |",
        "|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    for row in rows:
        sc, agg = row.scenario, row.summary
        lines.append(
            f"| {sc.attack.label()} | {sc.pipeline} | {sc.speed_mph:g} | {sc.condition} "
            f"| {_pct(agg.f_succ.get(10.0))} | {_pct(agg.f_succ.get(20.0))} "
            f"| {_pct(agg.f_succ.get(30.0))} | {_pct(agg.f_max_n)} "
            f"| {_pct(agg.stop_rate)} | {_pct(agg.violation_rate)} "
            f"| {_dist(agg.violation_distance)} |"
        )
    return "\n".join(lines) + "\n"


def write_matrix(
    rows: Sequence[MatrixRow],
    out_dir: Path,
    *,
    name: str,
    base_seed: int,
    figures: bool = True,
) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    csv_path = out_dir / "matrix.csv"
    csv_path.write_text(matrix_csv(rows, name=name, base_seed=base_seed), encoding="utf-8")
    paths["csv"] = csv_path
    md_path = out_dir / "matrix.md"
    md_path.write_text(matrix_markdown(rows, name=name), encoding="utf-8")
    paths["markdown"] = md_path
    if figures:
        paths.update(render_matrix_figures(rows, out_dir))
    return paths


# ---------------------------------------------------------------------------
# figures

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_run_figure(report: RunReport, path: Path) -> Path:
    """Two-panel run picture: the speed profile and the approach geometry
    with the per-frame detection raster."""
    plt = _pyplot()
    frames = report.frames
    t = [r.t for r in frames]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(t, [r.speed for r in frames], label="speed", color="tab:blue")
    ax1.plot(t, [r.target_speed for r in frames], label="target", color="tab:gray",
             linestyle="--", linewidth=1)
    commit = next((r.t for r in frames if r.committed), None)
    if commit is not None:
        ax1.axvline(commit, color="tab:orange", linewidth=1, label="stop commit")
    fulfilled = next((r.t for r in frames if r.fulfilled), None)
    if fulfilled is not None:
        ax1.axvline(fulfilled, color="tab:green", linewidth=1, label="full stop")
    ax1.set_ylabel("speed [m/s]")
    ax1.legend(loc="upper right", fontsize=8)

    ax2.plot(t, [r.dist_line for r in frames], color="tab:blue", label="distance to line")
    ax2.axhline(0.0, color="black", linewidth=1)
    hit_t = [r.t for r in frames if r.detected]
    miss_t = [r.t for r in frames if not r.detected and r.dist_sign > 0]
    ax2.plot(hit_t, [0.0] * len(hit_t), "|", color="tab:green", markersize=6, label="detected")
    ax2.plot(miss_t, [0.0] * len(miss_t), "|", color="tab:red", markersize=6, label="missed")
    ax2.set_ylabel("distance [m]")
    ax2.set_xlabel("time [s]")
    ax2.legend(loc="upper right", fontsize=8)

    sc = report.scenario
    fig.suptitle(
        f"{sc.attack.label()} / {sc.pipeline} / {sc.speed_mph:g} mph / {sc.condition} "
        f"(seed {report.seed})",
        fontsize=10,
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_matrix_figures(rows: Sequence[MatrixRow], out_dir: Path) -> dict[str, Path]:
    """Aggregate pictures: violation rates by speed, and the component-level
    versus system-level effectiveness scatter."""
    plt = _pyplot()
    paths = {}

    attacks = sorted({row.scenario.attack.label() for row in rows})
    fig, axes = plt.subplots(
        1, max(len(attacks), 1), figsize=(4 * max(len(attacks), 1), 3.5), squeeze=False
    )
    for ax, attack in zip(axes[0], attacks):
        sub = [r for r in rows if r.scenario.attack.label() == attack]
        pipelines = sorted({r.scenario.pipeline for r in sub})
        speeds = sorted({r.scenario.speed_mph for r in sub})
        width = 0.8 / max(len(pipelines), 1)
        for i, pipe in enumerate(pipelines):
            xs, ys = [], []
            for j, speed in enumerate(speeds):
                match = [
                    r for r in sub
                    if r.scenario.pipeline == pipe and r.scenario.speed_mph == speed
                ]
                if match:
                    xs.append(j + i * width)
                    ys.append(100.0 * sum(m.summary.violation_rate for m in match) / len(match))
            ax.bar(xs, ys, width=width, label=pipe)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(speeds))])
        ax.set_xticklabels([f"{s:g}" for s in speeds])
        ax.set_ylim(0, 105)
        ax.set_title(attack, fontsize=10)
        ax.set_xlabel("speed [mph]")
        ax.set_ylabel("violation rate [%]")
        ax.legend(fontsize=7)
    fig.tight_layout()
    vio_path = out_dir / "matrix_violation_rates.png"
    fig.savefig(vio_path, dpi=120)
    plt.close(fig)
    paths["violation_figure"] = vio_path

    fig, ax = plt.subplots(figsize=(5, 4))
    for row in rows:
        if row.summary.f_max_n is None:
            continue
        ax.scatter(
            100.0 * row.summary.f_max_n,
            100.0 * row.summary.violation_rate,
            s=18,
            color="tab:red" if row.summary.violation_rate > 0 else "tab:blue",
        )
    ax.set_xlabel("component level: best 50-frame misdetection rate [%]")
    ax.set_ylabel("system level: violation rate [%]")
    ax.set_xlim(-3, 103)
    ax.set_ylim(-3, 103)
    ax.set_title("component-level vs system-level attack effectiveness", fontsize=10)
    fig.tight_layout()
    gap_path = out_dir / "matrix_component_vs_system.png"
    fig.savefig(gap_path, dpi=120)
    plt.close(fig)
    paths["gap_figure"] = gap_path
    return paths
