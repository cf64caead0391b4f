"""Pose-error metrics, per-step rewards and the success test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .geom import Pose2D, angdist, normalize_angle

SUCCESS_RADIUS = 0.2
_RHO_EPS = 1e-6


class PolarError(NamedTuple):
    rho: float
    alpha: float
    beta: float


@dataclass(frozen=True)
class RewardSpec:
    kind: str = "DistMinimize"  # or "Progress"
    metric: str = "Polar"  # or "Pose"
    lambda_alpha: float = 0.2
    lambda_beta: float = 0.2
    lambda_theta: float = 0.2

    def __post_init__(self):
        if self.kind not in ("DistMinimize", "Progress"):
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.metric not in ("Polar", "Pose"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if min(self.lambda_alpha, self.lambda_beta, self.lambda_theta) < 0:
            raise ValueError("metric weights must be non-negative")

    def distance(self, current: Pose2D, goal: Pose2D) -> float:
        if self.metric == "Polar":
            return d_polar(current, goal, self.lambda_alpha, self.lambda_beta)
        return d_pose(current, goal, self.lambda_theta)

    def reward(self, d_prev: float, d_t: float, d_init: float) -> float:
        return reward(d_prev, d_t, d_init, self.kind)


def polar_error(current: Pose2D, goal: Pose2D) -> PolarError:
    """Range, bearing and final-heading error of ``current`` relative to ``goal``."""
    dx = goal.x - current.x
    dy = goal.y - current.y
    rho = math.hypot(dx, dy)
    if rho < _RHO_EPS:
        # bearing is undefined on top of the goal; the heading error goes to beta
        return PolarError(rho, 0.0, normalize_angle(goal.theta - current.theta))
    bearing = math.atan2(dy, dx)
    return PolarError(rho, normalize_angle(bearing - current.theta),
                      normalize_angle(goal.theta - bearing))


def d_polar(current: Pose2D, goal: Pose2D, lambda_alpha: float = 0.2,
            lambda_beta: float = 0.2) -> float:
    rho, alpha, beta = polar_error(current, goal)
    return rho + lambda_alpha * abs(alpha) + lambda_beta * abs(beta)


def d_pose(current: Pose2D, goal: Pose2D, lambda_theta: float = 0.2) -> float:
    return current.distance(goal) + lambda_theta * angdist(goal.theta, current.theta)


def reward(d_prev: float, d_t: float, d_init: float, kind: str = "DistMinimize") -> float:
    if not d_init > 0:
        raise ValueError(f"d_init must be positive, got {d_init}")
    if kind == "DistMinimize":
        return max(0.0, min(d_prev / d_init, 1.0) - min(d_t / d_init, 1.0))
    if kind == "Progress":
        # net progress since the start, paid every step
        return max(0.0, (d_init - d_t) / d_init)
    raise ValueError(f"unknown reward kind {kind!r}")


def is_success(current: Pose2D, goal: Pose2D, radius: float = SUCCESS_RADIUS,
               heading_tol: float | None = None) -> bool:
    if current.distance(goal) > radius:
        return False
    return heading_tol is None or angdist(current.theta, goal.theta) <= heading_tol


def first_entry(p0: Pose2D, p1: Pose2D, goal: Pose2D, radius: float = SUCCESS_RADIUS) -> float | None:
    """Fraction of the straight move p0 -> p1 at which the success disc is first entered."""
    ex, ey = p1.x - p0.x, p1.y - p0.y
    fx, fy = p0.x - goal.x, p0.y - goal.y
    a = ex * ex + ey * ey
    c = fx * fx + fy * fy - radius * radius
    if c <= 0:
        return 0.0
    if a == 0:
        return None
    b = 2 * (ex * fx + ey * fy)
    disc = b * b - 4 * a * c
    if disc < 0:
        return None
    t = (-b - math.sqrt(disc)) / (2 * a)
    return t if 0.0 <= t <= 1.0 else None


def interpolate_pose(p0: Pose2D, p1: Pose2D, t: float) -> Pose2D:
    dth = normalize_angle(p1.theta - p0.theta)
    return Pose2D(p0.x + t * (p1.x - p0.x), p0.y + t * (p1.y - p0.y), p0.theta + t * dth)
