"""Shared record types: detections, object states, track outputs, tracker config."""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace

import numpy as np

from .geometry import Box2D, Box3D


class ConfigError(ValueError):
    pass


class UnknownKey(ConfigError):
    pass


class OutOfRangeValue(ConfigError):
    pass


class TrackStatus(enum.Enum):
    BIRTH = "birth"
    TRACKED = "tracked"
    OCCLUDED = "occluded"
    LOST = "lost"
    DEAD = "dead"


@dataclass
class DetectionRecord:
    """One per-frame monocular detection with its decoded-geometry inputs."""

    frame_index: int
    box2d: Box2D
    center_proj: np.ndarray  # (2,) pixels, projection of the 3D box center
    depth: float  # meters, camera-frame
    yaw_local: float  # radians, appearance-relative yaw
    dimensions: np.ndarray  # (3,) meters (l, w, h)
    appearance: np.ndarray  # fixed-length embedding
    score: float

    def __post_init__(self):
        self.center_proj = np.asarray(self.center_proj, dtype=float).reshape(2)
        self.dimensions = np.asarray(self.dimensions, dtype=float).reshape(3)
        self.appearance = np.asarray(self.appearance, dtype=float).reshape(-1)
        if self.depth <= 0:
            raise ValueError("detection depth must be positive")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError("detection score must be in [0, 1]")


@dataclass
class ObjectState:
    """World-frame object state plus its current-camera projection."""

    position: np.ndarray  # (3,) meters, world
    yaw: float  # radians, world, about +z
    dimensions: np.ndarray  # (3,) meters
    appearance: np.ndarray
    velocity: np.ndarray  # (3,) meters/frame, world
    center_px: np.ndarray  # (2,) pixels
    depth: float  # meters, camera-frame

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.dimensions = np.asarray(self.dimensions, dtype=float).reshape(3)
        self.appearance = np.asarray(self.appearance, dtype=float).reshape(-1)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.center_px = np.asarray(self.center_px, dtype=float).reshape(2)

    def box3d(self) -> Box3D:
        return Box3D(self.position, self.dimensions, self.yaw)

    def copy(self) -> "ObjectState":
        return ObjectState(
            self.position.copy(),
            self.yaw,
            self.dimensions.copy(),
            self.appearance.copy(),
            self.velocity.copy(),
            self.center_px.copy(),
            self.depth,
        )


@dataclass
class TrackRecord:
    frame_index: int
    track_id: int
    box3d: Box3D
    velocity: np.ndarray  # (3,) meters/frame
    box2d_projected: Box2D
    status: TrackStatus

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if self.track_id < 0:
            raise ValueError("track_id must be >= 0")


@dataclass
class SequenceInput:
    """Frame-aligned detections, poses, and intrinsics for one sequence."""

    intrinsics: object  # CameraIntrinsics
    poses: list  # CameraPose per frame, contiguous from frame 0
    detections: list  # list[list[DetectionRecord]] per frame

    @property
    def n_frames(self) -> int:
        return len(self.poses)


@dataclass
class TrackerConfig:
    """Association weights, thresholds, and lifecycle policy.

    Weight defaults follow the appearance/3D-overlap mixture (0.3 / 0.7);
    the 2D-overlap channel is off by default but available for the
    image-space baseline (w_2d=1, others 0).
    """

    w_deep: float = 0.3
    w_2d: float = 0.0
    w_3d: float = 0.7
    occlusion_cover_threshold: float = 0.7
    max_lost_age: int = 20
    range_min: float = 0.15
    range_max: float = 100.0
    ord_tie_meters: float = 1.0
    motion_backend: str = "kf3d"  # none | kf2d | kf3d | lstm
    affinity_accept_threshold: float = 0.3
    # records for coasting tracklets are suppressed below the detectable
    # box size; smaller objects are filtered from benchmarks anyway
    min_emit_box_area: float = 256.0
    # ablation knobs: depth-ordered overlap masking + depth indicator, and
    # the dedicated occluded lifecycle state (off = plain lost handling)
    use_depth_ordering: bool = True
    use_occlusion_state: bool = True

    _BACKENDS = ("none", "kf2d", "kf3d", "lstm")

    def validate(self) -> "TrackerConfig":
        for name in ("w_deep", "w_2d", "w_3d"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise OutOfRangeValue(f"{name}={value} outside [0, 1]")
        if self.w_deep + self.w_2d + self.w_3d <= 0.0:
            raise OutOfRangeValue("affinity weights must not all be zero")
        for name in ("occlusion_cover_threshold", "affinity_accept_threshold"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise OutOfRangeValue(f"{name}={value} outside [0, 1]")
        if self.max_lost_age < 1:
            raise OutOfRangeValue(f"max_lost_age={self.max_lost_age} must be >= 1")
        if not (0.0 < self.range_min < self.range_max):
            raise OutOfRangeValue(
                f"need 0 < range_min < range_max, got {self.range_min}, {self.range_max}"
            )
        if self.ord_tie_meters < 0.0:
            raise OutOfRangeValue("ord_tie_meters must be >= 0")
        if self.min_emit_box_area < 0.0:
            raise OutOfRangeValue("min_emit_box_area must be >= 0")
        if self.motion_backend not in self._BACKENDS:
            raise OutOfRangeValue(f"motion_backend={self.motion_backend!r} not in {self._BACKENDS}")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "TrackerConfig":
        known = {f.name for f in fields(cls) if not f.name.startswith("_")}
        unknown = set(data) - known
        if unknown:
            raise UnknownKey(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    def to_dict(self) -> dict:
        return {
            f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")
        }

    def replace(self, **kwargs) -> "TrackerConfig":
        return replace(self, **kwargs).validate()
