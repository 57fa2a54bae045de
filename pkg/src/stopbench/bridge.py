"""Synchronous message channel between the plant and the AD stack.

All plant/AD traffic crosses named channels; hooks registered on a channel
transform payloads in (order, registration-index) order before delivery.
Hooks are the mounting point for sensor-layer attacks and defenses; component
swaps are handled one level up where the pipeline stages live.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Any, Callable

from .scenario import PipelineConfig

log = logging.getLogger(__name__)

CAMERA_FRAME = "CameraFrame"
GPS_POSE = "GpsPose"
PLAN_DECISION = "PlanDecision"
CONTROL_CMD = "ControlCmd"
TRAJECTORY_LOG = "TrajectoryLog"

CHANNELS = (CAMERA_FRAME, GPS_POSE, PLAN_DECISION, CONTROL_CMD, TRAJECTORY_LOG)

PIPELINE_STAGES = ("detector-front-end", "tracker", "planner", "controller")


class BridgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpsPose:
    """Reported ego pose on the GpsPose channel (attack hooks may shift it)."""

    s: float
    lateral: float = 0.0
    heading: float = 0.0
    speed: float = 0.0


@dataclass(frozen=True)
class Hook:
    channel: str
    transform: Callable[[Any], Any]
    order: int = 0
    name: str = ""


@dataclass(frozen=True)
class Message:
    channel: str
    payload: Any
    tick: int


class Bridge:
    """In-process pub/sub with ordered payload hooks.

    Delivery is synchronous on the simulation thread; with no hooks attached
    a publish is a pure pass-through of the payload.
    """

    def __init__(self):
        self._hooks: dict[str, list[tuple[int, int, Hook]]] = {c: [] for c in CHANNELS}
        self._subscribers: dict[str, list[Callable[[Message], None]]] = {
            c: [] for c in CHANNELS
        }
        self._last_tick: dict[str, int] = {}
        self._hook_seq = 0

    def add_hook(self, hook: Hook) -> None:
        if hook.channel not in self._hooks:
            raise BridgeError(f"unknown channel: {hook.channel}")
        self._hooks[hook.channel].append((hook.order, self._hook_seq, hook))
        self._hook_seq += 1
        self._hooks[hook.channel].sort(key=lambda item: (item[0], item[1]))

    def subscribe(self, channel: str, fn: Callable[[Message], None]) -> None:
        if channel not in self._subscribers:
            raise BridgeError(f"unknown channel: {channel}")
        self._subscribers[channel].append(fn)

    def publish(self, channel: str, payload: Any, tick: int) -> Any:
        """Run the channel's hooks over ``payload``, deliver, and return the
        delivered payload."""
        if channel not in self._hooks:
            raise BridgeError(f"unknown channel: {channel}")
        last = self._last_tick.get(channel)
        if last is not None and tick < last:
            raise BridgeError(
                f"tick went backwards on {channel}: {tick} after {last}"
            )
        self._last_tick[channel] = tick
        for _, _, hook in self._hooks[channel]:
            payload = hook.transform(payload)
        msg = Message(channel=channel, payload=payload, tick=tick)
        for fn in self._subscribers[channel]:
            fn(msg)
        return payload


def make_gps_offset_hook(offset_m: float, order: int = 0) -> Hook:
    """Demonstration sensor attack: shifts the reported GPS position forward
    by ``offset_m``, which shrinks any map-queried distance by the same amount."""
    return Hook(
        channel=GPS_POSE,
        transform=lambda pose: replace(pose, s=pose.s + offset_m),
        order=order,
        name=f"gps-offset+{offset_m:g}m",
    )


BUILTIN_SENSOR_HOOKS: dict[str, Callable[[dict[str, float]], Hook]] = {
    "gps-offset": lambda params: make_gps_offset_hook(params.get("offset_m", 10.0)),
}


class ConsistencyDefense:
    """Map/vision consistency checker (demonstration defense).

    Raises an alarm whenever the map places the sign inside detector range
    but vision produced fewer than the track-creation quota of hits over the
    last track-deletion window of frames.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self._window: deque[bool] = deque(maxlen=config.track_delete_frames)
        self.alarm_frames: list[int] = []

    def update(self, frame: int, map_sign_distance: float, detected: bool) -> bool:
        if not (0.0 < map_sign_distance < self.config.max_range):
            self._window.clear()
            return False
        self._window.append(detected)
        if (
            len(self._window) == self.config.track_delete_frames
            and sum(self._window) < self.config.track_create_frames
        ):
            self.alarm_frames.append(frame)
            return True
        return False


class Pipeline:
    """Named AD stages wired over one bridge, with the attack/defense
    mounting surface: profile binding, sensor hooks, and component swaps."""

    def __init__(self, bridge: Bridge, variant: str, profiles: dict[str, Any]):
        self.bridge = bridge
        self.variant = variant
        self.profiles = profiles
        self.stages: dict[str, Any] = {}
        self.bound_profile: Any = None
        self.defense: ConsistencyDefense | None = None

    def register_physical_attack(self, profile_name: str) -> Any:
        """Bind a detection profile for this run (the desk-scale stand-in for
        placing a perturbed sign in the scene). Re-binding overrides."""
        if profile_name not in self.profiles:
            raise BridgeError(
                f"unknown attack profile {profile_name!r} "
                f"(available: {', '.join(sorted(self.profiles))})"
            )
        if self.bound_profile is not None:
            log.warning(
                "physical attack re-registered: %s replaces %s",
                profile_name,
                self.bound_profile.name,
            )
        self.bound_profile = self.profiles[profile_name]
        return self.bound_profile

    def register_sensor_attack(self, hook: Hook) -> None:
        self.bridge.add_hook(hook)

    def swap_component(self, name: str, replacement: Any) -> None:
        if name not in PIPELINE_STAGES:
            raise BridgeError(
                f"unknown pipeline stage {name!r} "
                f"(available: {', '.join(PIPELINE_STAGES)})"
            )
        self.stages[name] = replacement

    def register_defense(self, checker: ConsistencyDefense) -> ConsistencyDefense:
        if self.variant not in ("Map", "Fusion"):
            raise BridgeError(
                f"consistency defense needs a map source; the {self.variant!r} "
                "pipeline variant has none"
            )
        self.defense = checker
        return checker
