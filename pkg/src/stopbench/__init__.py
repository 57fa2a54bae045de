"""stopbench: closed-loop evaluation of STOP-sign detection attacks.

A deterministic desk-scale bench that drives a modular AD pipeline
(detection oracle, Kalman tracking, map/pinhole/fused distance estimation,
stop planner, Stanley + PID control) against profile-driven detection
attacks, and reports both component-level and system-level effectiveness.
"""

from importlib import resources
from pathlib import Path

__version__ = "0.3.0"

from .scenario import (  # noqa: E402
    AttackSpec,
    Matrix,
    PipelineConfig,
    Scenario,
    ScenarioError,
    expand_matrix,
    parse_matrix,
    parse_scenario,
    render_scenario,
)
from .sensing import (  # noqa: E402
    AttackProfile,
    Detection,
    DetectionOracle,
    load_builtin_profiles,
    resolve_pipeline_config,
)
from .planner_control import (  # noqa: E402
    RunReport,
    run_closed_loop,
    run_scenario,
)
from .metrics import (  # noqa: E402
    aggregate,
    align_traces,
    best_window_rate,
    frame_success_rates,
    pearson,
    system_metrics,
)

__all__ = [
    "AttackProfile",
    "AttackSpec",
    "Detection",
    "DetectionOracle",
    "Matrix",
    "PipelineConfig",
    "RunReport",
    "Scenario",
    "ScenarioError",
    "aggregate",
    "align_traces",
    "best_window_rate",
    "builtin_file",
    "expand_matrix",
    "frame_success_rates",
    "load_builtin_profiles",
    "parse_matrix",
    "parse_scenario",
    "pearson",
    "render_scenario",
    "resolve_pipeline_config",
    "run_closed_loop",
    "run_scenario",
    "system_metrics",
]


def builtin_file(name: str) -> Path:
    """Path of a shipped scenario/matrix config (see ``stopbench/data``)."""
    path = resources.files("stopbench") / "data" / name
    return Path(str(path))
