"""Plant model: kinematic ego vehicle on a straight single-lane road.

The test road runs along increasing ``s`` with the lane center at lateral 0.
A STOP sign post and its stop line sit near the far end; the vehicle starts
at ``s = 0`` and the experiment ends shortly after the stop line is crossed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class VehicleState:
    s: float = 0.0              # longitudinal position along road [m]
    lateral_offset: float = 0.0  # signed offset from lane center [m]
    heading: float = 0.0         # 0 = road direction [rad]
    speed: float = 0.0           # >= 0, no reverse [m/s]


@dataclass(frozen=True)
class WorldGeometry:
    stop_line_s: float           # stop line position [m]
    sign_s: float                # STOP sign post position [m]
    lane_center: float = 0.0

    def sign_distance(self, state: VehicleState) -> float:
        """Signed distance from the vehicle to the sign post (negative once passed)."""
        return self.sign_s - state.s


@dataclass(frozen=True)
class ControlCmd:
    steering: float = 0.0        # [rad]
    accel: float = 0.0           # [m/s^2]


def step_vehicle(
    state: VehicleState,
    cmd: ControlCmd,
    dt: float,
    *,
    wheelbase: float = 2.7,
    max_steer: float = 0.5,
    accel_limit: float = 2.0,
    decel_limit: float = 3.4,
) -> VehicleState:
    """Advance the kinematic bicycle model by one step of ``dt`` seconds.

    Steering and acceleration commands are clamped to the actuator limits;
    speed is clamped at zero (the vehicle cannot reverse in this scenario).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    for name, v in (("steering", cmd.steering), ("accel", cmd.accel),
                    ("speed", state.speed), ("s", state.s)):
        if not math.isfinite(v):
            raise ValueError(f"non-finite {name}: {v}")

    steer = min(max(cmd.steering, -max_steer), max_steer)
    accel = min(max(cmd.accel, -decel_limit), accel_limit)

    speed = max(0.0, state.speed + accel * dt)
    s = state.s + state.speed * math.cos(state.heading) * dt
    lateral = state.lateral_offset + state.speed * math.sin(state.heading) * dt
    heading = state.heading + (state.speed / wheelbase) * math.tan(steer) * dt
    return VehicleState(s=s, lateral_offset=lateral, heading=heading, speed=speed)


def distance_to_stop_line(state: VehicleState, geometry: WorldGeometry) -> float:
    """Signed distance to the stop line; negative once the line is crossed."""
    return geometry.stop_line_s - state.s
