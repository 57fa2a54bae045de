"""Kalman tracking of the sign in image space, plus distance estimation.

The tracker runs a constant-velocity filter over (u, v, h) pixel
measurements with nearest-neighbor association and consecutive-count track
management: a track confirms after ``track_create_frames`` consecutive hits
and is deleted after ``track_delete_frames`` consecutive misses. Distance to
the stop line comes from one of three sources depending on the pipeline
variant: an HD-map query of the reported GPS position, a pinhole estimate
from the sign's pixel height, or the map fused into the tracker as a second
detection source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bridge import GpsPose
from .scenario import PipelineConfig
from .sensing import Detection
from .world import WorldGeometry

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DELETED = "deleted"


@dataclass
class Track:
    id: int
    state: np.ndarray                 # (u, v, h, du, dv, dh), px and px/s
    covariance: np.ndarray            # 6x6
    consecutive_hits: int = 1
    consecutive_misses: int = 0
    total_hits: int = 1
    status: str = TENTATIVE


class KalmanSignTracker:
    """Multi-object tracker specialized to the single-sign scene."""

    def __init__(self, config: PipelineConfig, dt: float):
        self.config = config
        self.dt = dt
        self.tracks: list[Track] = []
        self._next_id = 1

        self.F = np.eye(6)
        for i in range(3):
            self.F[i, i + 3] = dt
        q = config.accel_sigma**2
        self.Q = np.zeros((6, 6))
        for i in range(3):
            self.Q[i, i] = q * dt**4 / 4.0
            self.Q[i, i + 3] = self.Q[i + 3, i] = q * dt**3 / 2.0
            self.Q[i + 3, i + 3] = q * dt**2
        self.H = np.zeros((3, 6))
        self.H[0, 0] = self.H[1, 1] = self.H[2, 2] = 1.0
        self.R = np.eye(3) * config.meas_sigma_px**2
        self._P0 = np.diag(
            [config.meas_sigma_px**2] * 3 + [200.0**2] * 3
        )

    # -- filtering ---------------------------------------------------------

    def kf_step(self, detections: list[Detection]) -> None:
        """Predict all tracks, associate detections, update or count misses.

        Unmatched detections spawn tentative tracks unless they fall inside
        the association gate of an existing track (duplicate suppression for
        multi-source fusion).
        """
        for tr in self.tracks:
            tr.state = self.F @ tr.state
            tr.covariance = self.F @ tr.covariance @ self.F.T + self.Q

        dets = [d for d in detections if d.present]
        unmatched = set(range(len(dets)))
        matched_tracks: set[int] = set()

        # Greedy nearest-neighbor on predicted (u, v) pixel distance.
        pairs = []
        for ti, tr in enumerate(self.tracks):
            for di in range(len(dets)):
                dist = math.hypot(
                    dets[di].u - tr.state[0], dets[di].v - tr.state[1]
                )
                if dist <= self.config.gate_px:
                    pairs.append((dist, ti, di))
        pairs.sort(key=lambda p: (p[0], p[1], p[2]))
        for dist, ti, di in pairs:
            if ti in matched_tracks or di not in unmatched:
                continue
            matched_tracks.add(ti)
            unmatched.discard(di)
            self._update(self.tracks[ti], dets[di])

        for ti, tr in enumerate(self.tracks):
            if ti not in matched_tracks:
                tr.consecutive_misses += 1
                tr.consecutive_hits = 0

        for di in sorted(unmatched):
            det = dets[di]
            if det.confidence < self.config.detection_threshold:
                continue
            near_existing = any(
                math.hypot(det.u - tr.state[0], det.v - tr.state[1])
                <= self.config.gate_px
                for tr in self.tracks
            )
            if near_existing:
                continue
            self._spawn(det)

    def _update(self, tr: Track, det: Detection) -> None:
        z = np.array([det.u, det.v, det.h_px])
        y = z - self.H @ tr.state
        S = self.H @ tr.covariance @ self.H.T + self.R
        K = tr.covariance @ self.H.T @ np.linalg.inv(S)
        tr.state = tr.state + K @ y
        P = (np.eye(6) - K @ self.H) @ tr.covariance
        tr.covariance = (P + P.T) / 2.0  # symmetrization guard
        tr.consecutive_hits += 1
        tr.consecutive_misses = 0
        tr.total_hits += 1

    def _spawn(self, det: Detection) -> None:
        state = np.array([det.u, det.v, det.h_px, 0.0, 0.0, 0.0])
        self.tracks.append(
            Track(
                id=self._next_id,
                state=state,
                covariance=self._P0.copy(),
            )
        )
        self._next_id += 1

    # -- lifecycle ---------------------------------------------------------

    def manage_tracks(self) -> None:
        for tr in self.tracks:
            if (
                tr.status == TENTATIVE
                and tr.consecutive_hits >= self.config.track_create_frames
            ):
                tr.status = CONFIRMED
            if tr.consecutive_misses >= self.config.track_delete_frames:
                tr.status = DELETED
        self.tracks = [tr for tr in self.tracks if tr.status != DELETED]

    def step(self, detections: list[Detection]) -> None:
        self.kf_step(detections)
        self.manage_tracks()

    # -- queries -----------------------------------------------------------

    def confirmed_track(self) -> Track | None:
        best = None
        for tr in self.tracks:
            if tr.status == CONFIRMED and (best is None or tr.id < best.id):
                best = tr
        return best

    def status_label(self) -> str:
        if any(tr.status == CONFIRMED for tr in self.tracks):
            return CONFIRMED
        if self.tracks:
            return TENTATIVE
        return "none"


# ---------------------------------------------------------------------------
# distance estimation and fusion

@dataclass(frozen=True)
class FusedSignEstimate:
    tracked: bool
    distance: float | None            # to the stop line [m]; None when untracked
    source: str


def estimate_distance_map(gps_pose: GpsPose, geometry: WorldGeometry) -> float:
    """Stop-line distance from the reported GPS position (map query)."""
    return geometry.stop_line_s - gps_pose.s


def estimate_distance_pinhole(h_px: float, config: PipelineConfig) -> float:
    """Sign distance from its pixel height under the pinhole model."""
    if h_px <= 0.0:
        raise ValueError(f"pixel height must be positive, got {h_px}")
    return config.focal_length * config.sign_height / h_px


@dataclass
class PinholeRangeEstimator:
    """Stop-line distance from vision: the pinhole estimate of the latest
    associated detection, dead-reckoned by ego displacement between hits."""

    config: PipelineConfig
    sign_to_line: float = 0.0         # sign post minus stop line position [m]
    distance: float | None = field(default=None, init=False)

    def advance(self, ds: float) -> None:
        if self.distance is not None:
            self.distance -= ds

    def observe(self, det: Detection) -> None:
        self.distance = (
            estimate_distance_pinhole(det.h_px, self.config) - self.sign_to_line
        )


def fuse(
    tracked: bool,
    vision_distance: float | None,
    map_distance: float | None,
    variant: str,
) -> FusedSignEstimate:
    """Combine track liveness with the variant's distance source.

    All variants gate the stop decision on the vision track being confirmed;
    they differ in where the distance comes from. Fusion additionally feeds a
    map-derived detection into the tracker each frame (done by the runner),
    so its track cannot starve while the sign is in range.
    """
    if not tracked:
        return FusedSignEstimate(tracked=False, distance=None, source="none")
    if variant == "Map":
        return FusedSignEstimate(tracked=True, distance=map_distance, source="map")
    if variant == "Pinhole":
        return FusedSignEstimate(
            tracked=True, distance=vision_distance, source="vision-pinhole"
        )
    if variant == "Fusion":
        distance = map_distance if map_distance is not None else vision_distance
        return FusedSignEstimate(tracked=True, distance=distance, source="fused")
    raise ValueError(f"unknown pipeline variant: {variant!r}")
