"""Planner, controllers, and the fixed-timestep closed-loop runner.

The planner holds the desired cruise speed until a tracked sign comes within
braking distance of the current speed, then commits to a constant-deceleration
stop aimed just short of the line. The commitment is a latch: once braking
has started it runs to completion even if the track is lost mid-stop, because
a new stop decision requires a live track but an issued one does not. After a
completed stop and a short hold the planner resumes the cruise speed.

Control runs at control_hz (Stanley steering plus a PID speed loop with
planner feedforward); perception, tracking, fusion, and planning run every
control_hz / perception_hz ticks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

from .bridge import (
    BUILTIN_SENSOR_HOOKS,
    CAMERA_FRAME,
    CONTROL_CMD,
    GPS_POSE,
    PLAN_DECISION,
    TRAJECTORY_LOG,
    Bridge,
    BridgeError,
    ConsistencyDefense,
    GpsPose,
    Pipeline,
)
from .metrics import (
    DEFAULT_WINDOW,
    ComponentMetrics,
    SystemMetrics,
    best_window_rate,
    frame_success_rates,
    system_metrics,
)
from .scenario import PipelineConfig, Scenario
from .sensing import (
    AttackProfile,
    Detection,
    DetectionOracle,
    load_builtin_profiles,
    project_sign,
    resolve_pipeline_config,
)
from .tracker import (
    KalmanSignTracker,
    estimate_distance_map,
    fuse,
)
from .world import ControlCmd, VehicleState, WorldGeometry, distance_to_stop_line, step_vehicle
from .tracker import PinholeRangeEstimator


# ---------------------------------------------------------------------------
# planning

@dataclass(frozen=True)
class PlanDecision:
    target_speed: float
    target_accel: float               # feedforward hint for the speed loop
    stop_commitment: bool = False
    stop_fulfilled: bool = False
    # Continuation state threaded through successive plan() calls: the
    # dead-reckoned meters left to the braking rest point, the remaining
    # post-stop hold, and the ego position at the previous planning tick.
    brake_remaining: float | None = None
    hold_left: float = 0.0
    last_s: float | None = None


@dataclass(frozen=True)
class PlannerEnv:
    """Run-level planning context: pipeline parameters plus the cruise speed."""

    config: PipelineConfig
    desired_speed: float
    dt: float                         # planning period, 1 / perception_hz


def braking_distance(v: float, config: PipelineConfig) -> float:
    """Distance needed to stop from speed ``v`` at the safe deceleration,
    plus the configured trigger margin."""
    if v < 0.0:
        raise ValueError(f"speed must be non-negative, got {v}")
    return v * v / (2.0 * config.decel_limit) + config.brake_margin


def plan(estimate, state: VehicleState, prev: PlanDecision, env: PlannerEnv) -> PlanDecision:
    """One planning step; see the module docstring for the policy."""
    cfg = env.config
    ds = 0.0 if prev.last_s is None else state.s - prev.last_s
    committed = prev.stop_commitment
    fulfilled = prev.stop_fulfilled
    remaining = prev.brake_remaining
    hold_left = prev.hold_left

    if committed and not fulfilled and remaining is not None:
        remaining -= ds
        if estimate.tracked and estimate.distance is not None:
            remaining = estimate.distance - cfg.stop_standoff

    if (
        not committed
        and estimate.tracked
        and estimate.distance is not None
        and estimate.distance <= braking_distance(state.speed, cfg)
    ):
        committed = True
        remaining = estimate.distance - cfg.stop_standoff

    if fulfilled:
        if hold_left > 0.0:
            hold_left = max(0.0, hold_left - env.dt)
            brake = -cfg.decel_limit if state.speed > cfg.stop_speed_eps else 0.0
            target_speed, target_accel = 0.0, brake
        else:
            target_speed, target_accel = env.desired_speed, 0.0
    elif committed:
        believed_line = (remaining or 0.0) + cfg.stop_standoff
        if state.speed <= cfg.stop_speed_eps and believed_line <= cfg.stop_zone:
            fulfilled = True
            hold_left = cfg.post_stop_hold
            target_speed, target_accel = 0.0, 0.0
        else:
            target_speed = math.sqrt(2.0 * cfg.decel_limit * max(0.0, remaining or 0.0))
            target_speed = min(target_speed, env.desired_speed)
            target_accel = -cfg.decel_limit if target_speed < state.speed else 0.0
    elif state.speed < env.desired_speed - 1e-9:
        target_speed, target_accel = env.desired_speed, cfg.accel_limit
    else:
        target_speed, target_accel = env.desired_speed, 0.0

    return PlanDecision(
        target_speed=target_speed,
        target_accel=target_accel,
        stop_commitment=committed,
        stop_fulfilled=fulfilled,
        brake_remaining=remaining,
        hold_left=hold_left,
        last_s=state.s,
    )


# ---------------------------------------------------------------------------
# control

def stanley_steer(
    cross_error: float, heading_error: float, v: float, config: PipelineConfig
) -> float:
    """Classic Stanley steering law, clamped to the steering limit."""
    steer = heading_error + math.atan(
        config.stanley_gain * cross_error / max(v, config.stanley_v_floor)
    )
    return min(max(steer, -config.max_steer), config.max_steer)


@dataclass(frozen=True)
class ControllerState:
    pid_integral: float = 0.0
    pid_prev_error: float = 0.0


def pid_accel(
    target_speed: float,
    speed: float,
    ctrl_state: ControllerState,
    dt: float,
    config: PipelineConfig,
    feedforward: float = 0.0,
) -> tuple[float, ControllerState]:
    """PID speed loop with feedforward, actuator clamping, and anti-windup
    (the integral holds whenever the output saturates in the error's
    direction)."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    e = target_speed - speed
    derivative = (e - ctrl_state.pid_prev_error) / dt
    limit = config.pid_integral_limit
    integral = min(max(ctrl_state.pid_integral + e * dt, -limit), limit)

    out = (
        config.pid_kp * e
        + config.pid_ki * integral
        + config.pid_kd * derivative
        + feedforward
    )
    lo, hi = -config.decel_limit, config.accel_limit
    clamped = min(max(out, lo), hi)
    if clamped != out and (out - clamped) * e > 0.0:
        integral = ctrl_state.pid_integral
        out = (
            config.pid_kp * e
            + config.pid_ki * integral
            + config.pid_kd * derivative
            + feedforward
        )
        clamped = min(max(out, lo), hi)
    return clamped, ControllerState(pid_integral=integral, pid_prev_error=e)


class SpeedSteerController:
    """Default controller stage: Stanley lateral + PID longitudinal."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self._pid = ControllerState()

    def step(self, decision: PlanDecision, state: VehicleState, dt: float) -> ControlCmd:
        accel, self._pid = pid_accel(
            decision.target_speed,
            state.speed,
            self._pid,
            dt,
            self.config,
            feedforward=decision.target_accel,
        )
        steer = stanley_steer(
            -state.lateral_offset, -state.heading, state.speed, self.config
        )
        return ControlCmd(steering=steer, accel=accel)


# ---------------------------------------------------------------------------
# pipeline stages and builtin replacements

class DefaultPlanner:
    """Default planner stage; threads the plan continuation internally."""

    def __init__(self, env: PlannerEnv):
        self.env = env
        self.prev = PlanDecision(target_speed=env.desired_speed, target_accel=0.0)

    def plan(self, estimate, state: VehicleState) -> PlanDecision:
        self.prev = plan(estimate, state, self.prev, self.env)
        return self.prev


class AlwaysCruisePlanner:
    """Replacement planner that ignores the sign entirely."""

    def __init__(self, env: PlannerEnv):
        self.env = env

    def plan(self, estimate, state: VehicleState) -> PlanDecision:
        return PlanDecision(target_speed=self.env.desired_speed, target_accel=0.0)


class ConstantMissDetector:
    """Replacement detector front end that never reports the sign."""

    def sample(self, state: VehicleState, geometry: WorldGeometry, frame: int) -> Detection:
        return Detection(frame=frame, present=False)


BUILTIN_REPLACEMENTS = {
    "detector-front-end": {
        "constant-miss": lambda env, cfg: ConstantMissDetector(),
    },
    "planner": {
        "always-cruise": lambda env, cfg: AlwaysCruisePlanner(env),
    },
}


# ---------------------------------------------------------------------------
# closed-loop execution

@dataclass(frozen=True)
class FrameRow:
    """One perception-rate log row; the run CSV serializes these."""

    frame: int
    t: float
    s: float
    speed: float
    dist_sign: float
    dist_line: float
    present: bool
    confidence: float
    detected: bool
    tracked: bool
    track_status: str
    dist_est: float                   # NaN while untracked
    target_speed: float
    accel_cmd: float
    steer_cmd: float
    committed: bool
    fulfilled: bool
    alarm: bool


@dataclass(frozen=True)
class TrajRow:
    t: float
    s: float
    lateral: float
    heading: float
    speed: float
    accel_cmd: float
    steering_cmd: float


@dataclass
class RunReport:
    scenario: Scenario
    config: PipelineConfig
    seed: int
    run_index: int
    frames: list[FrameRow]
    component: ComponentMetrics
    system: SystemMetrics
    alarms: list[int] = field(default_factory=list)
    incomplete: bool = False
    wall_time: float = 0.0
    trajectory: list[TrajRow] | None = None


def run_closed_loop(
    scenario: Scenario,
    config: PipelineConfig | None = None,
    *,
    run_index: int = 0,
    seed: int | None = None,
    profiles: dict[str, AttackProfile] | None = None,
    defense: bool = False,
    collect_trajectory: bool = False,
    pipeline_setup=None,
) -> RunReport:
    """Execute one run of ``scenario`` and return its report.

    ``seed`` overrides the scenario-derived per-run seed. ``pipeline_setup``
    is an optional callback receiving the assembled Pipeline before the loop
    starts, for registering extra hooks, swaps, or defenses from tests and
    library callers.
    """
    t0 = time.perf_counter()
    profiles = profiles if profiles is not None else load_builtin_profiles()
    bridge = Bridge()
    pipeline = Pipeline(bridge, scenario.pipeline, profiles)

    attack = scenario.attack
    profile_name = attack.profile if attack.kind == "physical" else "none"
    profile = pipeline.register_physical_attack(profile_name)

    if attack.kind == "sensor":
        factory = BUILTIN_SENSOR_HOOKS.get(attack.hook or "")
        if factory is None:
            raise BridgeError(
                f"unknown sensor hook {attack.hook!r} "
                f"(available: {', '.join(sorted(BUILTIN_SENSOR_HOOKS))})"
            )
        pipeline.register_sensor_attack(factory(dict(attack.hook_params)))

    cfg = config if config is not None else resolve_pipeline_config(scenario, profile)
    run_seed = seed if seed is not None else scenario.run_seed(run_index)

    geometry = WorldGeometry(
        stop_line_s=scenario.road_length,
        sign_s=scenario.road_length + scenario.stop_line_offset,
    )
    env = PlannerEnv(
        config=cfg,
        desired_speed=scenario.desired_speed,
        dt=1.0 / cfg.perception_hz,
    )

    pipeline.stages = {
        "detector-front-end": DetectionOracle(profile, scenario.condition, cfg, run_seed),
        "tracker": KalmanSignTracker(cfg, 1.0 / cfg.perception_hz),
        "planner": DefaultPlanner(env),
        "controller": SpeedSteerController(cfg),
    }
    if attack.kind == "cyber":
        factories = BUILTIN_REPLACEMENTS.get(attack.stage or "", {})
        if attack.replacement not in factories:
            raise BridgeError(
                f"unknown replacement {attack.replacement!r} for stage "
                f"{attack.stage!r}"
            )
        pipeline.swap_component(attack.stage, factories[attack.replacement](env, cfg))
    if defense:
        pipeline.register_defense(ConsistencyDefense(cfg))
    if pipeline_setup is not None:
        pipeline_setup(pipeline)

    vision = PinholeRangeEstimator(cfg, sign_to_line=scenario.stop_line_offset)
    state = VehicleState(s=0.0, speed=scenario.desired_speed)
    dt_c = 1.0 / cfg.control_hz
    stride = cfg.control_hz // cfg.perception_hz
    cap = int(cfg.control_hz * (3.0 * scenario.road_length / scenario.desired_speed + 60.0))

    decision = PlanDecision(target_speed=scenario.desired_speed, target_accel=0.0)
    frames: list[FrameRow] = []
    trajectory: list[TrajRow] | None = [] if collect_trajectory else None
    incomplete = True
    prev_s_frame = state.s
    pending = None

    for tick in range(cap):
        t = tick * dt_c
        pending = None
        if tick % stride == 0:
            frame = tick // stride
            dist_sign = geometry.sign_distance(state)
            dist_line = distance_to_stop_line(state, geometry)

            raw = pipeline.stages["detector-front-end"].sample(state, geometry, frame)
            det = bridge.publish(CAMERA_FRAME, raw, frame)
            detected = bool(det.present and det.confidence >= cfg.detection_threshold)

            gps = bridge.publish(
                GPS_POSE,
                GpsPose(
                    s=state.s,
                    lateral=state.lateral_offset,
                    heading=state.heading,
                    speed=state.speed,
                ),
                frame,
            )
            map_line_d = estimate_distance_map(gps, geometry)
            map_sign_d = map_line_d + scenario.stop_line_offset

            vision.advance(state.s - prev_s_frame)
            prev_s_frame = state.s
            det_list: list[Detection] = []
            if detected:
                det_list.append(det)
                vision.observe(det)
            if scenario.pipeline == "Fusion" and 0.0 < map_sign_d < cfg.max_range:
                synth_pix = project_sign(
                    replace(state, s=gps.s), geometry, cfg
                )
                if synth_pix is not None:
                    det_list.append(
                        Detection(
                            frame=frame,
                            present=True,
                            confidence=1.0,
                            u=synth_pix.u,
                            v=synth_pix.v,
                            h_px=synth_pix.h_px,
                        )
                    )
            tracker = pipeline.stages["tracker"]
            tracker.step(det_list)
            tracked = tracker.confirmed_track() is not None

            estimate = fuse(tracked, vision.distance, map_line_d, scenario.pipeline)

            alarm = False
            if pipeline.defense is not None:
                alarm = pipeline.defense.update(frame, map_sign_d, detected)

            decision = pipeline.stages["planner"].plan(estimate, state)
            bridge.publish(PLAN_DECISION, decision, frame)

            pending = (frame, t, dist_sign, dist_line, det, detected, tracked,
                       tracker.status_label(), estimate, alarm)

        cmd = pipeline.stages["controller"].step(decision, state, dt_c)
        cmd = bridge.publish(CONTROL_CMD, cmd, tick)

        if pending is not None:
            frame, ft, dist_sign, dist_line, det, detected, tracked, status, estimate, alarm = pending
            frames.append(
                FrameRow(
                    frame=frame,
                    t=ft,
                    s=state.s,
                    speed=state.speed,
                    dist_sign=dist_sign,
                    dist_line=dist_line,
                    present=det.present,
                    confidence=det.confidence if det.present else 0.0,
                    detected=detected,
                    tracked=tracked,
                    track_status=status,
                    dist_est=estimate.distance if estimate.distance is not None else math.nan,
                    target_speed=decision.target_speed,
                    accel_cmd=cmd.accel,
                    steer_cmd=cmd.steering,
                    committed=decision.stop_commitment,
                    fulfilled=decision.stop_fulfilled,
                    alarm=alarm,
                )
            )

        traj_row = TrajRow(
            t=t,
            s=state.s,
            lateral=state.lateral_offset,
            heading=state.heading,
            speed=state.speed,
            accel_cmd=cmd.accel,
            steering_cmd=cmd.steering,
        )
        bridge.publish(TRAJECTORY_LOG, traj_row, tick)
        if trajectory is not None:
            trajectory.append(traj_row)

        state = step_vehicle(
            state,
            cmd,
            dt_c,
            wheelbase=cfg.wheelbase,
            max_steer=cfg.max_steer,
            accel_limit=cfg.accel_limit,
            decel_limit=cfg.decel_limit,
        )
        if state.s > geometry.stop_line_s + cfg.overrun:
            incomplete = False
            break

    # Component metrics cover the frames where the sign is ahead and inside
    # detector range; beyond max_range a miss is geometry, not attack effect.
    in_range = [
        (r.dist_sign, r.detected)
        for r in frames
        if 0.0 < r.dist_sign < cfg.max_range
    ]
    flags = [detected for _, detected in in_range]
    component = ComponentMetrics(
        f_succ=frame_success_rates(in_range),
        f_max_n=best_window_rate(flags, DEFAULT_WINDOW) if len(flags) >= DEFAULT_WINDOW else None,
        n=DEFAULT_WINDOW,
    )
    system = system_metrics(frames, cfg, incomplete=incomplete)

    return RunReport(
        scenario=scenario,
        config=cfg,
        seed=run_seed,
        run_index=run_index,
        frames=frames,
        component=component,
        system=system,
        alarms=list(pipeline.defense.alarm_frames) if pipeline.defense else [],
        incomplete=incomplete,
        wall_time=time.perf_counter() - t0,
        trajectory=trajectory,
    )


def run_scenario(
    scenario: Scenario,
    config: PipelineConfig | None = None,
    *,
    profiles: dict[str, AttackProfile] | None = None,
    defense: bool = False,
    collect_trajectory: bool = False,
) -> list[RunReport]:
    """All repetitions of one scenario, with seeds derived per run index."""
    return [
        run_closed_loop(
            scenario,
            config,
            run_index=i,
            profiles=profiles,
            defense=defense,
            collect_trajectory=collect_trajectory,
        )
        for i in range(scenario.runs)
    ]
