"""Calibration sweep behind the committed profile and planner constants.

The speed-threshold behavior of the strong close-range attack (violation at
10 mph, clean stops at 15-30 mph) is a race between two events during the
approach:

* the track dies after ``track_delete_frames`` consecutive misses, i.e.
  after traveling ``2 s * v`` into the all-miss core of the profile, and
* the planner commits to braking when the tracked distance reaches
  ``v^2 / (2 * 3.4) + brake_margin``.

The attack wins only when the core bin is wide enough that the track dies
before the commit point at 10 mph while the commit point still falls inside
(or beyond) the core at every higher speed. This module sweeps the core-bin
width and the brake margin, checks the full speed pattern plus the benign
stop placement, and prints which pairs reproduce it. The committed values
are ``width = 14 m`` (ss-like profile) and ``brake_margin = 1.5 m`` with a
1.0 m stop standoff (``sensing.CALIBRATED_PIPELINE``).

Run with ``python -m stopbench.calibrate [--runs N]``.
"""

from __future__ import annotations

import argparse
import dataclasses

from .scenario import AttackSpec, PipelineConfig, Scenario
from .sensing import AttackProfile, DistanceBin, load_builtin_profiles, resolve_pipeline_config
from .planner_control import run_closed_loop

SPEEDS_MPH = (10.0, 15.0, 20.0, 25.0, 30.0)
WIDTHS = (11.0, 12.0, 13.0, 14.0, 15.0, 16.0)
MARGINS = (0.5, 1.0, 1.5, 2.0)

COMMITTED_WIDTH = 14.0
COMMITTED_MARGIN = 1.5


def _with_core_width(profile: AttackProfile, width: float) -> AttackProfile:
    """Rebuild the profile with its all-miss core bin ending at ``width``."""
    variants = {}
    for condition, bins in profile.variants.items():
        core, rest = bins[0], bins[1:]
        new_bins = [dataclasses.replace(core, hi=width)]
        for b in rest:
            lo = max(b.lo, width)
            if b.hi <= lo:
                continue
            new_bins.append(dataclasses.replace(b, lo=lo))
        variants[condition] = tuple(new_bins)
    return AttackProfile(
        name=profile.name, threshold=profile.threshold, variants=variants
    ).validate()


def evaluate_point(width: float, margin: float, runs: int = 3) -> dict:
    """Closed-loop pattern check for one (core width, brake margin) pair.

    Returns per-speed violation counts for the attack, plus the benign stop
    placement bracket, and whether the target pattern (all runs violate at
    10 mph, none above, benign stop inside the zone) holds.
    """
    profiles = dict(load_builtin_profiles())
    profiles["ss-like"] = _with_core_width(profiles["ss-like"], width)
    overrides = (("brake_margin", margin),)

    violations: dict[float, int] = {}
    for speed in SPEEDS_MPH:
        sc = Scenario(
            speed_mph=speed,
            pipeline="Map",
            attack=AttackSpec(kind="physical", profile="ss-like"),
            runs=runs,
            pipeline_overrides=overrides,
        )
        reports = [
            run_closed_loop(sc, run_index=i, profiles=profiles) for i in range(runs)
        ]
        violations[speed] = sum(r.system.violated for r in reports)

    stop_positions = []
    for speed in (10.0, 30.0):
        sc = Scenario(
            speed_mph=speed,
            pipeline="Map",
            attack=AttackSpec(),
            runs=1,
            pipeline_overrides=overrides,
        )
        report = run_closed_loop(sc, profiles=profiles)
        pos = next(
            (row.dist_line for row in report.frames
             if row.speed <= report.config.stop_speed_eps and row.dist_line <= report.config.stop_zone),
            None,
        )
        stop_positions.append(pos)

    cfg = resolve_pipeline_config(
        Scenario(speed_mph=10, pipeline="Map", attack=AttackSpec(),
                 pipeline_overrides=overrides),
        profiles["none"],
    )
    pattern_ok = (
        violations[10.0] == runs
        and all(violations[s] == 0 for s in SPEEDS_MPH if s != 10.0)
        and all(p is not None and 0.0 <= p <= cfg.stop_zone for p in stop_positions)
    )
    return {
        "width": width,
        "margin": margin,
        "violations": violations,
        "benign_stop_positions": stop_positions,
        "pattern_ok": pattern_ok,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=3, help="runs per speed point")
    args = parser.parse_args(argv)

    print(f"{'width':>6} {'margin':>7}  " + "  ".join(f"{s:>4.0f}mph" for s in SPEEDS_MPH) + "  pattern")
    for width in WIDTHS:
        for margin in MARGINS:
            result = evaluate_point(width, margin, runs=args.runs)
            marks = "  ".join(
                f"{result['violations'][s]:>6d}" for s in SPEEDS_MPH
            )
            tag = "OK" if result["pattern_ok"] else "--"
            committed = " <- committed" if (width, margin) == (COMMITTED_WIDTH, COMMITTED_MARGIN) else ""
            print(f"{width:6.1f} {margin:7.2f}  {marks}  {tag}{committed}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
