"""Planar poses, angle arithmetic and the pinhole camera model.

Frames
------
World: x, y on the ground plane, z up. Heading theta is measured
counter-clockwise from +x.

Camera: mounted at (x, y, cam_height) looking along the heading with a
level optical axis. +X points to the robot's right, +Y points down and
+Z along the optical axis. Pixel origin is the top-left corner, u grows
rightward and v downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap ``a`` into (-pi, pi]."""
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def normalize_angles(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`normalize_angle`."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("angles must be finite")
    r = np.remainder(a + math.pi, TWO_PI) - math.pi
    # remainder lands on [-pi, pi); push the closed end over
    return np.where(r <= -math.pi, r + TWO_PI, r)


def angdist(a: float, b: float) -> float:
    """Absolute angular distance on the circle, in [0, pi]."""
    return abs(normalize_angle(a - b))


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance(self, other: "Pose2D") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.theta)


@dataclass(frozen=True)
class CameraIntrinsics:
    focal: float = 32.0
    u0: float = 32.0
    v0: float = 32.0
    width: int = 64
    height: int = 64
    cam_height: float = 0.6

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal must be positive")
        if not (0 <= self.u0 < self.width and 0 <= self.v0 < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def square(cls, size: int, hfov: float = math.pi / 2, cam_height: float = 0.6):
        """Square image with the principal point at the centre and the given horizontal FOV."""
        focal = (size / 2.0) / math.tan(hfov / 2.0)
        return cls(focal=focal, u0=size / 2.0, v0=size / 2.0, width=size, height=size,
                   cam_height=cam_height)

    def pixel_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """(u, v) coordinates of every pixel centre, shape (height, width)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(float)
        return u, v


class CamPoint(NamedTuple):
    X: float
    Y: float
    Z: float


def camera_axes(robot: Pose2D) -> np.ndarray:
    """Rows are the camera X, Y, Z axes expressed in world coordinates."""
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    return np.array([
        [s, -c, 0.0],   # right
        [0.0, 0.0, -1.0],  # down
        [c, s, 0.0],    # forward
    ])


def camera_origin(robot: Pose2D, cam: CameraIntrinsics) -> np.ndarray:
    return np.array([robot.x, robot.y, cam.cam_height])


def world_to_camera(p_world, robot: Pose2D, cam: CameraIntrinsics) -> CamPoint:
    d = np.asarray(p_world, dtype=float) - camera_origin(robot, cam)
    X, Y, Z = camera_axes(robot) @ d
    return CamPoint(float(X), float(Y), float(Z))


def world_to_camera_array(points: np.ndarray, robot: Pose2D, cam: CameraIntrinsics) -> np.ndarray:
    """Transform world points of shape (..., 3) into camera coordinates."""
    return (np.asarray(points, dtype=float) - camera_origin(robot, cam)) @ camera_axes(robot).T


def camera_to_world_array(points: np.ndarray, robot: Pose2D, cam: CameraIntrinsics) -> np.ndarray:
    return np.asarray(points, dtype=float) @ camera_axes(robot) + camera_origin(robot, cam)


def project(p: CamPoint, cam: CameraIntrinsics) -> Optional[Tuple[float, float]]:
    """Pixel coordinates of ``p``, or None when it is not visible."""
    X, Y, Z = p
    if not Z > 0:
        return None
    u = cam.u0 + cam.focal * X / Z
    v = cam.v0 + cam.focal * Y / Z
    if 0 <= u < cam.width and 0 <= v < cam.height:
        return (u, v)
    return None


def project_array(points: np.ndarray, cam: CameraIntrinsics, tol: float = 0.0):
    """Vectorised projection. Returns (u, v, visible); u, v are NaN where Z <= 0.

    ``tol`` widens the image bounds so that round-off on border pixels does not flip visibility.
    """
    points = np.asarray(points, dtype=float)
    Z = points[..., 2]
    front = Z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, cam.u0 + cam.focal * points[..., 0] / Z, np.nan)
        v = np.where(front, cam.v0 + cam.focal * points[..., 1] / Z, np.nan)
        visible = front & (u >= -tol) & (u < cam.width + tol) & (v >= -tol) & (v < cam.height + tol)
    return u, v, visible


def backproject(u: float, v: float, Z: float, cam: CameraIntrinsics) -> CamPoint:
    return CamPoint((u - cam.u0) * Z / cam.focal, (v - cam.v0) * Z / cam.focal, Z)


def pixel_rays(cam: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions with unit Z component, shape (height, width, 3)."""
    u, v = cam.pixel_grid()
    return np.stack([(u - cam.u0) / cam.focal, (v - cam.v0) / cam.focal, np.ones_like(u)], axis=-1)
