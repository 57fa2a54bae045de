from __future__ import annotations

import math

import pytest

from stopbench.metrics import aggregate
from stopbench.planner_control import (
    ControllerState,
    PlanDecision,
    PlannerEnv,
    braking_distance,
    pid_accel,
    plan,
    run_closed_loop,
    stanley_steer,
)
from stopbench.report import frame_csv
from stopbench.scenario import AttackSpec, PipelineConfig, Scenario
from stopbench.tracker import FusedSignEstimate
from stopbench.world import VehicleState

CFG = PipelineConfig()  # spec defaults: brake_margin 0, stop_standoff 0


def test_braking_distance_hand_values():
    assert braking_distance(0.0, CFG) == CFG.brake_margin == 0.0
    assert abs(braking_distance(4.4704, CFG) - 2.939) < 1e-3
    assert abs(braking_distance(13.4112, CFG) - 26.45) < 1e-2
    with pytest.raises(ValueError):
        braking_distance(-1.0, CFG)


def test_braking_distance_includes_margin():
    cfg = PipelineConfig(brake_margin=1.5)
    assert braking_distance(4.4704, cfg) == pytest.approx(2.93896 + 1.5, abs=1e-3)


def _env(speed: float = 11.176, cfg: PipelineConfig = CFG) -> PlannerEnv:
    return PlannerEnv(config=cfg, desired_speed=speed, dt=0.05)


def test_plan_commits_at_braking_distance():
    env = _env()
    v = 11.176
    state = VehicleState(s=50.0, speed=v)
    d = braking_distance(v, CFG) - 1e-3
    est = FusedSignEstimate(tracked=True, distance=d, source="map")
    decision = plan(est, state, PlanDecision(v, 0.0), env)
    assert decision.stop_commitment
    assert decision.target_accel == -CFG.decel_limit


def test_plan_accelerates_when_untracked_below_desired():
    env = _env()
    est = FusedSignEstimate(tracked=False, distance=None, source="none")
    decision = plan(est, VehicleState(speed=5.0), PlanDecision(11.176, 0.0), env)
    assert decision.target_speed == env.desired_speed
    assert decision.target_accel > 0.0


def test_plan_holds_desired_speed_when_cruising():
    env = _env()
    est = FusedSignEstimate(tracked=True, distance=50.0, source="map")
    decision = plan(est, VehicleState(speed=11.176), PlanDecision(11.176, 0.0), env)
    assert not decision.stop_commitment
    assert decision.target_speed == env.desired_speed
    assert decision.target_accel == 0.0


def test_plan_commitment_is_a_latch():
    env = _env()
    prev = plan(
        FusedSignEstimate(tracked=True, distance=2.0, source="map"),
        VehicleState(s=10.0, speed=11.176),
        PlanDecision(11.176, 0.0),
        env,
    )
    assert prev.stop_commitment
    # Track dies mid-brake: the stop continues on dead reckoning.
    after = plan(
        FusedSignEstimate(tracked=False, distance=None, source="none"),
        VehicleState(s=10.5, speed=9.0),
        prev,
        env,
    )
    assert after.stop_commitment
    assert after.target_accel == -CFG.decel_limit
    assert after.brake_remaining == pytest.approx(prev.brake_remaining - 0.5)


def test_stanley_zero_and_hand_value():
    assert stanley_steer(0.0, 0.0, 5.0, CFG) == 0.0
    cfg = PipelineConfig(stanley_gain=1.0, max_steer=1.0)
    assert abs(stanley_steer(1.0, 0.0, 1.0, cfg) - 0.785398) < 1e-6  # atan(1)


def test_stanley_odd_symmetry_machine_precision():
    for e, psi, v in ((0.3, 0.1, 4.0), (1.2, -0.4, 0.01), (2.0, 0.0, 9.0)):
        assert stanley_steer(-e, -psi, v, CFG) == -stanley_steer(e, psi, v, CFG)


def test_stanley_clamped():
    assert stanley_steer(100.0, 1.0, 0.1, CFG) == CFG.max_steer
    assert stanley_steer(-100.0, -1.0, 0.1, CFG) == -CFG.max_steer


def test_pid_zero_error_zero_output():
    out, state = pid_accel(5.0, 5.0, ControllerState(), 0.01, CFG)
    assert out == 0.0
    assert state.pid_integral == 0.0


def test_pid_step_response_settles_with_zero_steady_state_error():
    # Closed loop against the pure-integrator plant at 100 Hz.
    v, state = 0.0, ControllerState()
    dt = 0.01
    settled_at = None
    for k in range(3000):
        out, state = pid_accel(5.0, v, state, dt, CFG)
        v = max(0.0, v + out * dt)
        t = (k + 1) * dt
        if settled_at is None and abs(v - 5.0) <= 0.02 * 5.0:
            settled_at = t
    assert settled_at is not None and settled_at < 10.0
    assert abs(v - 5.0) < 1e-3  # zero steady-state error with ki > 0


def test_pid_output_never_exceeds_actuator_limits():
    import random

    rnd = random.Random(9)
    state = ControllerState()
    v = 3.0
    for _ in range(500):
        target = rnd.uniform(-20.0, 20.0)
        out, state = pid_accel(target, v, state, 0.01, CFG, feedforward=rnd.uniform(-5, 5))
        assert -CFG.decel_limit <= out <= CFG.accel_limit
        v = max(0.0, v + out * 0.01)


def test_pid_rejects_bad_dt():
    with pytest.raises(ValueError):
        pid_accel(1.0, 0.0, ControllerState(), 0.0, CFG)


# ---------------------------------------------------------------------------
# closed loop

def test_benign_run_stops_then_crosses():
    report = run_closed_loop(
        Scenario(speed_mph=20, pipeline="Map", attack=AttackSpec(), runs=1)
    )
    assert report.system.stopped and not report.system.violated
    crossed = next(i for i, r in enumerate(report.frames) if r.dist_line < 0.0)
    fulfilled = next(i for i, r in enumerate(report.frames) if r.fulfilled)
    assert fulfilled < crossed


def test_strong_attack_violates_only_at_low_speed():
    low = run_closed_loop(
        Scenario(speed_mph=10, pipeline="Map",
                 attack=AttackSpec.parse("physical:ss-like"), runs=1)
    )
    assert low.system.violated and not low.system.stopped
    assert low.system.violation_distance == math.inf

    mid = run_closed_loop(
        Scenario(speed_mph=15, pipeline="Map",
                 attack=AttackSpec.parse("physical:ss-like"), runs=1)
    )
    assert mid.system.stopped and not mid.system.violated


def test_commitment_monotone_over_run():
    report = run_closed_loop(
        Scenario(speed_mph=20, pipeline="Map",
                 attack=AttackSpec.parse("physical:ss-like"), runs=1)
    )
    seen = False
    for row in report.frames:
        if row.committed:
            seen = True
        elif seen:
            pytest.fail("stop commitment dropped mid-run")
    assert seen


def test_component_system_gap_witness():
    # A profile with total component-level success whose runs still stop.
    report = run_closed_loop(
        Scenario(speed_mph=10, pipeline="Map",
                 attack=AttackSpec.parse("physical:rp2-like"), runs=1)
    )
    assert report.component.f_max_n == 1.0
    assert not report.system.violated


def test_run_determinism_byte_for_byte():
    sc = Scenario(speed_mph=20, pipeline="Map",
                  attack=AttackSpec.parse("physical:rp2-like"), runs=1)
    a = run_closed_loop(sc, seed=7)
    b = run_closed_loop(sc, seed=7)
    assert frame_csv(a) == frame_csv(b)


class _ParkedPlanner:
    """Never moves: forces the frame cap for the Incomplete path."""

    def plan(self, estimate, state):
        return PlanDecision(target_speed=0.0, target_accel=-3.4)


def test_frame_cap_flags_incomplete_and_excluded_from_aggregation():
    sc = Scenario(speed_mph=10, pipeline="Map", attack=AttackSpec(), runs=1)
    report = run_closed_loop(
        sc,
        pipeline_setup=lambda p: p.swap_component("planner", _ParkedPlanner()),
    )
    assert report.incomplete
    assert report.system.trip_time is None
    with pytest.raises(ValueError, match="no complete runs"):
        aggregate([report])


def test_trip_time_reasonable():
    report = run_closed_loop(
        Scenario(speed_mph=25, pipeline="Map", attack=AttackSpec(), runs=1)
    )
    # 100 m at 11.176 m/s cruise plus braking and a 1 s hold.
    assert 9.0 < report.system.trip_time < 20.0
