"""Camera geometry: pinhole projection, oriented 3D boxes, and box overlaps.

Conventions (fixed for the whole package):
  * World frame is right-handed with +z up; yaw rotates +x toward +y.
  * Camera frame is the usual computer-vision frame: x right, y down,
    z forward. A CameraPose maps world points into that frame,
    p_cam = R @ p_world + t.
  * Angles are radians, normalized to [0, 2*pi) at construction.
  * Lengths are meters, image coordinates are pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TAU = 2.0 * math.pi
MIN_CAMERA_Z = 1e-6


class GeometryError(ValueError):
    pass


class PointBehindCamera(GeometryError):
    """Raised when a point's camera-frame z is at or below the near limit."""


class BoxBehindCamera(GeometryError):
    """Raised when every corner of a box is behind the camera."""


class NonPositiveDepth(GeometryError):
    """Raised when a backprojection depth is not strictly positive."""


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    theta = math.fmod(theta, TAU)
    if theta < 0.0:
        theta += TAU
    # fmod of values just below 2*pi can round back up to 2*pi exactly
    if theta >= TAU:
        theta -= TAU
    return theta


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    image_width: float
    image_height: float

    def __post_init__(self):
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0.0 <= self.principal_x <= self.image_width):
            raise GeometryError("principal_x outside image")
        if not (0.0 <= self.principal_y <= self.image_height):
            raise GeometryError("principal_y outside image")

    @property
    def image_diagonal(self) -> float:
        return math.hypot(self.image_width, self.image_height)


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: p_cam = rotation @ p_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise GeometryError("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise GeometryError("rotation has negative determinant")

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    def world_to_camera(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def camera_to_world(self, point) -> np.ndarray:
        return self.rotation.T @ (np.asarray(point, dtype=float) - self.translation)

    @property
    def camera_center(self) -> np.ndarray:
        """Camera origin expressed in world coordinates."""
        return -self.rotation.T @ self.translation


def camera_heading(pose: CameraPose) -> float:
    """Azimuth of the camera's forward (+z) axis in the world xy-plane.

    Used to move yaws between camera-relative and world frames. Undefined
    (returns 0) for a camera looking straight up or down.
    """
    forward = pose.rotation.T @ np.array([0.0, 0.0, 1.0])
    if abs(forward[0]) < 1e-12 and abs(forward[1]) < 1e-12:
        return 0.0
    return math.atan2(forward[1], forward[0])


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError("degenerate Box2D: min exceeds max")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: world-frame center, (l, w, h) extents, yaw about +z."""

    center: np.ndarray
    dimensions: np.ndarray
    yaw: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        d = np.asarray(self.dimensions, dtype=float).reshape(3)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dimensions", d)
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))
        if np.any(d <= 0):
            raise GeometryError("box dimensions must be positive")

    @property
    def length(self) -> float:
        return float(self.dimensions[0])

    @property
    def width(self) -> float:
        return float(self.dimensions[1])

    @property
    def height(self) -> float:
        return float(self.dimensions[2])

    @property
    def volume(self) -> float:
        return float(np.prod(self.dimensions))


def yaw_rotation(yaw: float) -> np.ndarray:
    """3x3 rotation about +z taking +x toward +y for positive yaw."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def project_point(point, pose: CameraPose, intrinsics: CameraIntrinsics):
    """Project a world point. Returns ((u, v) pixels, camera-frame depth).

    Raises PointBehindCamera if the point is not strictly in front.
    """
    p_cam = pose.world_to_camera(point)
    z = float(p_cam[2])
    if z <= MIN_CAMERA_Z:
        raise PointBehindCamera(f"camera-frame z={z:.3g} <= {MIN_CAMERA_Z}")
    u = intrinsics.focal_x * p_cam[0] / z + intrinsics.principal_x
    v = intrinsics.focal_y * p_cam[1] / z + intrinsics.principal_y
    return np.array([u, v]), z


def backproject(pixel, depth: float, pose: CameraPose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Invert project_point: pixel + camera-frame depth -> world point."""
    if depth <= 0.0:
        raise NonPositiveDepth(f"depth={depth!r} must be > 0")
    u, v = float(pixel[0]), float(pixel[1])
    x = (u - intrinsics.principal_x) / intrinsics.focal_x * depth
    y = (v - intrinsics.principal_y) / intrinsics.focal_y * depth
    return pose.camera_to_world(np.array([x, y, depth]))


def alpha_to_theta(theta_l: float, x_c: float, intrinsics: CameraIntrinsics) -> float:
    """Local (appearance) yaw -> camera-frame yaw for an object seen at pixel x_c.

    The viewing-ray correction uses the horizontal image center, so the
    conversion is exactly invertible by theta_to_alpha for any x_c.
    """
    x_hat = x_c - intrinsics.image_width / 2.0
    return normalize_angle(theta_l + math.atan2(x_hat, intrinsics.focal_x))


def theta_to_alpha(theta: float, x_c: float, intrinsics: CameraIntrinsics) -> float:
    """Camera-frame yaw -> local (appearance) yaw; inverse of alpha_to_theta."""
    x_hat = x_c - intrinsics.image_width / 2.0
    return normalize_angle(theta - math.atan2(x_hat, intrinsics.focal_x))


# Corner order: all sign combinations of (l/2, w/2, h/2); the first four
# share the bottom face, the last four the top face.
_CORNER_SIGNS = np.array(
    [
        [1, 1, -1],
        [1, -1, -1],
        [-1, -1, -1],
        [-1, 1, -1],
        [1, 1, 1],
        [1, -1, 1],
        [-1, -1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)


def box3d_corners(box: Box3D) -> np.ndarray:
    """8x3 world-frame corners of an oriented box."""
    offsets = _CORNER_SIGNS * (box.dimensions / 2.0)
    return box.center + offsets @ yaw_rotation(box.yaw).T


def project_box(box: Box3D, pose: CameraPose, intrinsics: CameraIntrinsics) -> Box2D:
    """Axis-aligned image hull of the visible corners, clipped to the image.

    Corners behind the camera are ignored; a partially-behind box is
    truncated rather than rejected. Raises BoxBehindCamera only when no
    corner is in front.
    """
    corners = box3d_corners(box)
    cam = (pose.rotation @ corners.T).T + pose.translation
    in_front = cam[:, 2] > MIN_CAMERA_Z
    if not np.any(in_front):
        raise BoxBehindCamera("all corners behind camera")
    vis = cam[in_front]
    us = intrinsics.focal_x * vis[:, 0] / vis[:, 2] + intrinsics.principal_x
    vs = intrinsics.focal_y * vis[:, 1] / vis[:, 2] + intrinsics.principal_y
    x0 = min(max(float(us.min()), 0.0), intrinsics.image_width)
    x1 = min(max(float(us.max()), 0.0), intrinsics.image_width)
    y0 = min(max(float(vs.min()), 0.0), intrinsics.image_height)
    y1 = min(max(float(vs.max()), 0.0), intrinsics.image_height)
    return Box2D(x0, y0, x1, y1)


def iou_2d(a: Box2D, b: Box2D) -> float:
    """Intersection-over-union of two axis-aligned boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _bev_rect(box: Box3D) -> np.ndarray:
    """4x2 counterclockwise ground-plane footprint of an oriented box."""
    half = box.dimensions[:2] / 2.0
    local = np.array(
        [[half[0], half[1]], [-half[0], half[1]], [-half[0], -half[1]], [half[0], -half[1]]]
    )
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return box.center[:2] + local @ rot.T


def _clip_polygon(poly: np.ndarray, edge_a: np.ndarray, edge_b: np.ndarray) -> np.ndarray:
    """Clip a convex polygon against the half-plane left of edge a->b."""
    if len(poly) == 0:
        return poly
    edge = edge_b - edge_a
    # signed area sign: >= -tol keeps points on or left of the edge
    tol = 1e-12
    rel = poly - edge_a
    side = edge[0] * rel[:, 1] - edge[1] * rel[:, 0]
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        si, sj = side[i], side[j]
        if si >= -tol:
            out.append(poly[i])
        if (si >= -tol) != (sj >= -tol):
            denom = si - sj
            if abs(denom) > tol:
                t = si / denom
                out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out) if out else np.empty((0, 2))


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    """Ground-plane intersection area of two oriented boxes (convex clipping)."""
    poly = _bev_rect(a)
    rect_b = _bev_rect(b)
    for i in range(4):
        poly = _clip_polygon(poly, rect_b[i], rect_b[(i + 1) % 4])
        if len(poly) == 0:
            return 0.0
    return _polygon_area(poly)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: BEV rotated-rectangle intersection times vertical overlap."""
    z_lo = max(a.center[2] - a.height / 2.0, b.center[2] - b.height / 2.0)
    z_hi = min(a.center[2] + a.height / 2.0, b.center[2] + b.height / 2.0)
    dz = z_hi - z_lo
    if dz <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return inter / union
