"""Keyframe-based tracking.

Every filtered cloud is registered against the current keyframe's cloud, so
error accumulates per keyframe transition rather than per frame.  A cloud
becomes a new keyframe when its relative motion or elapsed time crosses any
of the configured thresholds.  When pre-computed odometry is available for
a cloud that would not become a keyframe, scan matching is skipped entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import PointCloud, Pose
from .registration import RegistrationConfig, align


@dataclass
class KeyframeCriteria:
    delta_trans: float = 5.0     # m
    delta_angle: float = 0.25    # rad
    delta_time: float = 1.0      # s

    def __post_init__(self):
        if min(self.delta_trans, self.delta_angle, self.delta_time) <= 0:
            raise ValueError("keyframe thresholds must be positive")


@dataclass
class Keyframe:
    cloud: PointCloud
    pose: Pose
    timestamp: float
    accumulated_distance: float
    index: int
    scan_context: object = None   # filled when inserted into the pose graph


def is_new_keyframe(rel: Pose, dt: float, crit: KeyframeCriteria) -> bool:
    """True iff any keyframe criterion fires for this relative motion."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return (np.linalg.norm(rel.translation) >= crit.delta_trans
            or rel.rotation_angle() >= crit.delta_angle
            or dt >= crit.delta_time)


@dataclass
class TrackResult:
    pose: Pose                       # world pose of this cloud
    relative: Pose                   # pose relative to the current keyframe
    new_keyframe: Optional[Keyframe]
    odometry_from_previous_keyframe: Optional[Pose]
    degraded: bool
    skipped: bool


class Tracker:
    """Short-term data association against the latest keyframe."""

    def __init__(self, reg_cfg: Optional[RegistrationConfig] = None,
                 criteria: Optional[KeyframeCriteria] = None):
        self.reg_cfg = reg_cfg or RegistrationConfig()
        self.criteria = criteria or KeyframeCriteria()
        self.keyframe: Optional[Keyframe] = None
        self._prev_rel = Pose.identity()      # previous cloud, keyframe frame
        self._last_step = Pose.identity()     # constant-motion model
        self._keyframe_count = 0
        self.registration_calls = 0

    def track(self, filtered: PointCloud, guess: Optional[Pose] = None,
              precomputed_rel: Optional[Pose] = None) -> TrackResult:
        """Process one filtered cloud.

        ``guess`` is the estimated motion since the previous cloud (from the
        pre-tracker or external odometry).  ``precomputed_rel``, when given,
        is trusted keyframe-relative odometry enabling frame skipping.
        """
        if self.keyframe is None:
            kf = Keyframe(filtered, Pose.identity(), filtered.timestamp, 0.0, 0)
            self.keyframe = kf
            self._keyframe_count = 1
            self._prev_rel = Pose.identity()
            return TrackResult(kf.pose, Pose.identity(), kf, None, False, False)

        kf = self.keyframe
        dt = filtered.timestamp - kf.timestamp

        if precomputed_rel is not None and not is_new_keyframe(
                precomputed_rel, dt, self.criteria):
            # below every threshold: trust the precomputed motion, skip matching
            pose = kf.pose @ precomputed_rel
            self._last_step = self._prev_rel.inverse() @ precomputed_rel
            self._prev_rel = precomputed_rel
            return TrackResult(pose, precomputed_rel, None, None, False, True)

        if guess is not None:
            guess_rel = self._prev_rel @ guess
        elif precomputed_rel is not None:
            guess_rel = precomputed_rel
        else:
            guess_rel = self._prev_rel @ self._last_step

        result = align(filtered, kf.cloud, guess_rel, self.reg_cfg)
        self.registration_calls += 1
        if not np.isfinite(result.fitness):
            # registration failed: constant-motion extrapolation, no keyframe
            rel = guess_rel
            pose = kf.pose @ rel
            self._prev_rel = rel
            return TrackResult(pose, rel, None, None, True, False)

        rel = result.transform
        pose = kf.pose @ rel
        self._last_step = self._prev_rel.inverse() @ rel
        self._prev_rel = rel

        if not is_new_keyframe(rel, dt, self.criteria):
            return TrackResult(pose, rel, None, None, False, False)

        new_kf = Keyframe(
            cloud=filtered,
            pose=pose,
            timestamp=filtered.timestamp,
            accumulated_distance=kf.accumulated_distance
            + float(np.linalg.norm(rel.translation)),
            index=self._keyframe_count)
        self._keyframe_count += 1
        self.keyframe = new_kf
        self._prev_rel = Pose.identity()
        return TrackResult(pose, rel, new_kf, rel, False, False)

    def update_keyframe_pose(self, pose: Pose):
        """Adopt an optimized pose for the current keyframe."""
        if self.keyframe is not None:
            self.keyframe.pose = pose
