"""Scenario and pipeline configuration: parsing, validation, matrix expansion.

Config files use a flat INI-style grammar (sections of ``key = value`` pairs,
``#`` comments, comma-separated lists). A scenario file carries a
``[scenario]`` section plus an optional ``[pipeline]`` override section; a
matrix file carries a single ``[matrix]`` section whose list-valued axes are
expanded into the Cartesian product of scenarios. The exact grammar is
documented in the README.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import itertools
from dataclasses import dataclass, field
from typing import Iterable

from .rng import mix64

MPH_TO_MPS = 0.44704  # exact statutory conversion

PIPELINE_VARIANTS = ("Map", "Pinhole", "Fusion")
ATTACK_KINDS = ("none", "physical", "sensor", "cyber")


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario/matrix configuration."""


@dataclass(frozen=True)
class AttackSpec:
    """One attack selection: benign, a detection profile, a sensor hook, or a
    component swap.

    Rendered as a compact string: ``none``, ``physical:<profile>``,
    ``sensor:<hook>[:k=v[,k=v...]]`` or ``cyber:<stage>:<replacement>``.
    """

    kind: str = "none"
    profile: str | None = None
    hook: str | None = None
    hook_params: tuple[tuple[str, float], ...] = ()
    stage: str | None = None
    replacement: str | None = None

    @staticmethod
    def parse(text: str) -> "AttackSpec":
        parts = text.strip().split(":")
        kind = parts[0]
        if kind == "none":
            if len(parts) != 1:
                raise ScenarioError(f"attack 'none' takes no arguments: {text!r}")
            return AttackSpec()
        if kind == "physical":
            if len(parts) != 2 or not parts[1]:
                raise ScenarioError(f"expected physical:<profile>, got {text!r}")
            return AttackSpec(kind="physical", profile=parts[1])
        if kind == "sensor":
            if len(parts) not in (2, 3) or not parts[1]:
                raise ScenarioError(f"expected sensor:<hook>[:params], got {text!r}")
            params: list[tuple[str, float]] = []
            if len(parts) == 3 and parts[2]:
                for kv in parts[2].split(","):
                    k, _, v = kv.partition("=")
                    if not _ or not k:
                        raise ScenarioError(f"bad hook parameter {kv!r} in {text!r}")
                    params.append((k.strip(), float(v)))
            return AttackSpec(kind="sensor", hook=parts[1], hook_params=tuple(params))
        if kind == "cyber":
            if len(parts) != 3 or not parts[1] or not parts[2]:
                raise ScenarioError(f"expected cyber:<stage>:<replacement>, got {text!r}")
            return AttackSpec(kind="cyber", stage=parts[1], replacement=parts[2])
        raise ScenarioError(
            f"unknown attack kind {kind!r} (expected one of: {', '.join(ATTACK_KINDS)})"
        )

    def render(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "physical":
            return f"physical:{self.profile}"
        if self.kind == "sensor":
            if self.hook_params:
                params = ",".join(f"{k}={v!r}" for k, v in self.hook_params)
                return f"sensor:{self.hook}:{params}"
            return f"sensor:{self.hook}"
        return f"cyber:{self.stage}:{self.replacement}"

    def label(self) -> str:
        """Short label for run ids and report tables."""
        if self.kind == "none":
            return "none"
        if self.kind == "physical":
            return str(self.profile)
        if self.kind == "sensor":
            return f"sensor-{self.hook}"
        return f"swap-{self.stage}"


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved AD pipeline parameters.

    Defaults follow the reference pipeline setup; the shipped attack profiles
    commit a small calibration overlay on top of these (see
    ``sensing.CALIBRATED_PIPELINE``), applied during scenario resolution.
    """

    perception_hz: int = 20
    control_hz: int = 100
    detection_threshold: float = 0.3
    track_create_frames: int = 4      # round(0.2 * perception_hz)
    track_delete_frames: int = 40     # round(2.0 * perception_hz)
    decel_limit: float = 3.4          # safe deceleration magnitude [m/s^2]
    accel_limit: float = 2.0
    brake_margin: float = 0.0         # added to the braking-distance trigger [m]
    stop_standoff: float = 0.0        # where braking aims to rest, before the line [m]
    stop_zone: float = 3.0            # full stop must land within this window [m]
    stop_speed_eps: float = 0.1       # [m/s]
    post_stop_hold: float = 1.0       # [s]
    stanley_gain: float = 2.5
    stanley_v_floor: float = 0.5      # avoids the low-speed singularity [m/s]
    pid_kp: float = 1.5
    pid_ki: float = 0.3
    pid_kd: float = 0.0
    pid_integral_limit: float = 3.0   # anti-windup clamp on the integral term
    max_steer: float = 0.5
    wheelbase: float = 2.7
    sign_height: float = 0.75         # standard STOP sign panel height [m]
    focal_length: float = 1000.0      # [px]
    sign_lateral: float = 3.0         # sign post offset from lane center [m]
    sign_center_height: float = 2.2   # panel center above ground [m]
    camera_height: float = 1.5
    image_cx: float = 960.0
    image_cy: float = 600.0
    max_range: float = 60.0           # detector range; profiles cover [0, max_range)
    gate_px: float = 50.0             # association gate (Euclidean pixel distance)
    meas_sigma_px: float = 2.0        # tracker's assumed measurement noise
    accel_sigma: float = 30.0         # tracker process noise (white accel, px/s^2)
    overrun: float = 5.0              # run ends this far past the stop line [m]

    def __post_init__(self):
        if self.control_hz % self.perception_hz != 0:
            raise ScenarioError(
                f"control_hz ({self.control_hz}) must be an integer multiple of "
                f"perception_hz ({self.perception_hz})"
            )


@dataclass(frozen=True)
class Scenario:
    """One fully specified closed-loop experiment."""

    speed_mph: float
    pipeline: str
    attack: AttackSpec
    name: str = ""
    condition: str = "noon-sunny"
    seed: int = 42
    runs: int = 1
    road_length: float = 100.0        # ego start distance from the stop line [m]
    stop_line_offset: float = 0.0     # sign post minus stop line position [m]
    pipeline_overrides: tuple[tuple[str, float | int], ...] = ()

    @property
    def desired_speed(self) -> float:
        """Cruise speed in m/s."""
        return self.speed_mph * MPH_TO_MPS

    def run_seed(self, run_index: int) -> int:
        """Deterministic per-run seed; distinct across (scenario seed, run)."""
        return mix64(self.seed, run_index)

    def default_name(self) -> str:
        return (
            f"{self.attack.label()}-{self.pipeline.lower()}-"
            f"{self.speed_mph:g}mph-{self.condition}"
        )


@dataclass(frozen=True)
class Matrix:
    """Axes of an experiment matrix; expanded to the Cartesian product."""

    speeds_mph: tuple[float, ...]
    pipelines: tuple[str, ...]
    attacks: tuple[AttackSpec, ...]
    conditions: tuple[str, ...]
    name: str = "matrix"
    base_seed: int = 42
    runs: int = 1
    road_length: float = 100.0
    stop_line_offset: float = 0.0
    pipeline_overrides: tuple[tuple[str, float | int], ...] = ()


# ---------------------------------------------------------------------------
# parsing helpers

_PIPELINE_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _read_sections(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed config: {exc}") from exc
    return cp


def _require(section: configparser.SectionProxy, key: str) -> str:
    if key not in section:
        raise ScenarioError(f"missing key: {key}")
    return section[key]


def _parse_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _parse_pipeline_overrides(section: configparser.SectionProxy) -> tuple:
    overrides = []
    for key, raw in section.items():
        if key not in _PIPELINE_FIELD_TYPES:
            raise ScenarioError(f"unknown pipeline parameter: {key}")
        kind = _PIPELINE_FIELD_TYPES[key]
        value = int(raw) if kind == "int" else float(raw)
        overrides.append((key, value))
    return tuple(overrides)


def _check_scenario(sc: Scenario) -> Scenario:
    if sc.pipeline not in PIPELINE_VARIANTS:
        raise ScenarioError(
            f"unknown pipeline variant {sc.pipeline!r} "
            f"(expected one of: {', '.join(PIPELINE_VARIANTS)})"
        )
    if sc.speed_mph <= 0:
        raise ScenarioError(f"speed_mph must be positive, got {sc.speed_mph}")
    if sc.runs < 1:
        raise ScenarioError(f"runs must be >= 1, got {sc.runs}")
    if not 0 <= sc.seed < 2**64:
        raise ScenarioError(f"seed must be a 64-bit unsigned integer, got {sc.seed}")
    # The vehicle must be physically able to stop on the road.
    stoppable = sc.desired_speed**2 / (2.0 * 3.4)
    if sc.road_length <= stoppable:
        raise ScenarioError(
            f"road_length_m ({sc.road_length}) must exceed the braking distance "
            f"at the desired speed ({stoppable:.2f} m)"
        )
    return sc


def parse_scenario(text: str) -> Scenario:
    """Parse one scenario config; fills documented defaults, converts mph."""
    cp = _read_sections(text)
    if "scenario" not in cp:
        raise ScenarioError("missing [scenario] section")
    sec = cp["scenario"]

    speed_mph = float(_require(sec, "speed_mph"))
    attack = AttackSpec.parse(_require(sec, "attack"))
    pipeline = _require(sec, "pipeline").strip()

    overrides = ()
    if "pipeline" in cp:
        overrides = _parse_pipeline_overrides(cp["pipeline"])

    sc = Scenario(
        speed_mph=speed_mph,
        pipeline=pipeline,
        attack=attack,
        name=sec.get("name", "").strip(),
        condition=sec.get("condition", "noon-sunny").strip(),
        seed=int(sec.get("seed", "42")),
        runs=int(sec.get("runs", "1")),
        road_length=float(sec.get("road_length_m", "100.0")),
        stop_line_offset=float(sec.get("stop_line_offset_m", "0.0")),
        pipeline_overrides=overrides,
    )
    return _check_scenario(sc)


def render_scenario(sc: Scenario) -> str:
    """Canonical text form; ``parse_scenario(render_scenario(s)) == s``."""
    out = io.StringIO()
    out.write("[scenario]\n")
    if sc.name:
        out.write(f"name = {sc.name}\n")
    out.write(f"speed_mph = {sc.speed_mph!r}\n")
    out.write(f"pipeline = {sc.pipeline}\n")
    out.write(f"attack = {sc.attack.render()}\n")
    out.write(f"condition = {sc.condition}\n")
    out.write(f"seed = {sc.seed}\n")
    out.write(f"runs = {sc.runs}\n")
    out.write(f"road_length_m = {sc.road_length!r}\n")
    out.write(f"stop_line_offset_m = {sc.stop_line_offset!r}\n")
    if sc.pipeline_overrides:
        out.write("\n[pipeline]\n")
        for key, value in sc.pipeline_overrides:
            out.write(f"{key} = {value!r}\n")
    return out.getvalue()


def parse_matrix(text: str) -> Matrix:
    """Parse a matrix config file (one [matrix] section)."""
    cp = _read_sections(text)
    if "matrix" not in cp:
        raise ScenarioError("missing [matrix] section")
    sec = cp["matrix"]

    speeds = tuple(float(v) for v in _parse_list(_require(sec, "speeds_mph")))
    pipelines = tuple(_parse_list(_require(sec, "pipelines")))
    attacks = tuple(AttackSpec.parse(a) for a in _parse_list(_require(sec, "attacks")))

    # Conditions either given directly or as a lighting x weather product.
    if "conditions" in sec:
        conditions = tuple(_parse_list(sec["conditions"]))
    elif "lighting" in sec or "weather" in sec:
        lighting = _parse_list(_require(sec, "lighting"))
        weather = _parse_list(_require(sec, "weather"))
        conditions = tuple(f"{li}-{w}" for li, w in itertools.product(lighting, weather))
    else:
        conditions = ("noon-sunny",)

    overrides = ()
    if "pipeline" in cp:
        overrides = _parse_pipeline_overrides(cp["pipeline"])

    m = Matrix(
        speeds_mph=speeds,
        pipelines=pipelines,
        attacks=attacks,
        conditions=conditions,
        name=sec.get("name", "matrix").strip(),
        base_seed=int(sec.get("base_seed", "42")),
        runs=int(sec.get("runs", "1")),
        road_length=float(sec.get("road_length_m", "100.0")),
        stop_line_offset=float(sec.get("stop_line_offset_m", "0.0")),
        pipeline_overrides=overrides,
    )
    for axis, values in (
        ("speeds_mph", m.speeds_mph),
        ("pipelines", m.pipelines),
        ("attacks", m.attacks),
        ("conditions", m.conditions),
    ):
        if not values:
            raise ScenarioError(f"empty axis: {axis}")
    return m


def expand_matrix(matrix: Matrix) -> list[Scenario]:
    """Cartesian product of the matrix axes, one scenario per combination.

    Axis order is attacks, pipelines, speeds, conditions; the combination
    index in that enumeration feeds the seed derivation, so adding runs or
    re-ordering rows downstream never changes a combination's seed.
    """
    scenarios = []
    combos = itertools.product(
        matrix.attacks, matrix.pipelines, matrix.speeds_mph, matrix.conditions
    )
    for idx, (attack, pipeline, speed, condition) in enumerate(combos):
        sc = Scenario(
            speed_mph=speed,
            pipeline=pipeline,
            attack=attack,
            condition=condition,
            seed=mix64(matrix.base_seed, idx),
            runs=matrix.runs,
            road_length=matrix.road_length,
            stop_line_offset=matrix.stop_line_offset,
            pipeline_overrides=matrix.pipeline_overrides,
        )
        sc = dataclasses.replace(sc, name=sc.default_name())
        scenarios.append(_check_scenario(sc))
    return scenarios


def apply_overrides(
    base: PipelineConfig, overrides: Iterable[tuple[str, float | int]]
) -> PipelineConfig:
    items = dict(overrides)
    if not items:
        return base
    unknown = set(items) - set(_PIPELINE_FIELD_TYPES)
    if unknown:
        raise ScenarioError(f"unknown pipeline parameter: {sorted(unknown)[0]}")
    return dataclasses.replace(base, **items)
