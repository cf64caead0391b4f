"""Ray-cast polygonal rooms, depth rendering and ground-truth correspondence maps."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geom import (
    CameraIntrinsics,
    Pose2D,
    camera_axes,
    camera_origin,
    pixel_rays,
    project_array,
    world_to_camera_array,
)

OCCLUSION_EPS = 0.01
DEFAULT_MAX_RANGE = 20.0


class OutsideFreeSpace(ValueError):
    pass


@dataclass(frozen=True)
class Wall:
    """Vertical rectangle standing on the segment p0-p1 between z_min and z_max."""

    p0: Tuple[float, float]
    p1: Tuple[float, float]
    z_min: float = 0.0
    z_max: float = 2.5
    texture_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p0", (float(self.p0[0]), float(self.p0[1])))
        object.__setattr__(self, "p1", (float(self.p1[0]), float(self.p1[1])))
        if self.length <= 0:
            raise ValueError("wall must have positive length")
        if not self.z_max > self.z_min:
            raise ValueError("wall must have positive height extent")

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])


@dataclass(frozen=True)
class Scene:
    walls: Tuple[Wall, ...]
    bounds: Tuple[float, float, float, float]  # xmin, ymin, xmax, ymax of the room
    floor: bool = True
    ceiling: Optional[float] = 2.5
    rng_seed: int = 0
    max_range: float = DEFAULT_MAX_RANGE

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))

    def _segments(self) -> Tuple[np.ndarray, np.ndarray]:
        a = np.array([w.p0 for w in self.walls], dtype=float).reshape(-1, 2)
        b = np.array([w.p1 for w in self.walls], dtype=float).reshape(-1, 2)
        return a, b

    def wall_distance(self, x: float, y: float) -> float:
        """Distance from a ground point to the nearest wall segment."""
        if not self.walls:
            return math.inf
        a, b = self._segments()
        return float(np.min(point_segment_distance(np.array([x, y]), a, b)))

    def is_free(self, x: float, y: float, clearance: float = 0.0) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < x < xmax and ymin < y < ymax):
            return False
        return self.wall_distance(x, y) > clearance

    def segment_clear(self, p: Sequence[float], q: Sequence[float], radius: float) -> bool:
        """True if a disc of ``radius`` swept from p to q touches no wall."""
        if not self.walls:
            return True
        a, b = self._segments()
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        return bool(np.all(segment_segment_distance(p, q, a, b) > radius))

    def to_json(self) -> str:
        doc = {
            "walls": [
                {"p0": list(w.p0), "p1": list(w.p1), "z_min": w.z_min, "z_max": w.z_max,
                 "texture_id": w.texture_id}
                for w in self.walls
            ],
            "bounds": list(self.bounds),
            "floor": self.floor,
            "ceiling": self.ceiling,
            "rng_seed": self.rng_seed,
            "max_range": self.max_range,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        doc = json.loads(text)
        walls = tuple(Wall(tuple(w["p0"]), tuple(w["p1"]), w["z_min"], w["z_max"],
                           w.get("texture_id", 0)) for w in doc["walls"])
        return cls(walls=walls, bounds=tuple(doc["bounds"]), floor=doc["floor"],
                   ceiling=doc["ceiling"], rng_seed=doc["rng_seed"], max_range=doc["max_range"])


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from point(s) p to segments a-b (broadcasting over leading axes)."""
    ab = b - a
    ap = p - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.clip(np.sum(ap * ab, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def segment_segment_distance(p: np.ndarray, q: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance between the segment p-q and each segment a[i]-b[i]."""
    d = np.minimum.reduce([
        point_segment_distance(p, a, b),
        point_segment_distance(q, a, b),
        point_segment_distance(a, p, q),
        point_segment_distance(b, p, q),
    ])
    r = q - p
    s = b - a
    denom = _cross(r, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(a - p, s) / denom
        u = _cross(a - p, r) / denom
    crossing = (denom != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return np.where(crossing, 0.0, d)


def generate_scene(width: float = 8.0, depth: float = 8.0, clutter: int = 0, seed: int = 0,
                   height: float = 2.5, min_len: float = 0.6, max_len: float = 2.0) -> Scene:
    """Rectangular room [0, width] x [0, depth] plus ``clutter`` random interior walls."""
    if not (width > 0 and depth > 0 and height > 0):
        raise ValueError("room dimensions must be positive")
    if clutter < 0:
        raise ValueError("clutter count must be non-negative")
    rng = np.random.default_rng(seed)
    corners = [(0.0, 0.0), (width, 0.0), (width, depth), (0.0, depth)]
    walls: List[Wall] = [
        Wall(corners[i], corners[(i + 1) % 4], 0.0, height, texture_id=i) for i in range(4)
    ]
    margin = 0.3
    while len(walls) < 4 + clutter:
        cx = rng.uniform(margin, width - margin)
        cy = rng.uniform(margin, depth - margin)
        length = rng.uniform(min_len, max_len)
        phi = rng.uniform(0.0, math.pi)
        hx, hy = 0.5 * length * math.cos(phi), 0.5 * length * math.sin(phi)
        p0 = (min(max(cx - hx, margin), width - margin), min(max(cy - hy, margin), depth - margin))
        p1 = (min(max(cx + hx, margin), width - margin), min(max(cy + hy, margin), depth - margin))
        if math.hypot(p1[0] - p0[0], p1[1] - p0[1]) < min_len / 2:
            continue
        walls.append(Wall(p0, p1, 0.0, height, texture_id=len(walls)))
    return Scene(walls=tuple(walls), bounds=(0.0, 0.0, width, depth), floor=True,
                 ceiling=height, rng_seed=seed)


def cast_rays(scene: Scene, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """First-hit ray parameter t for rays ``origin + t * dirs`` (dirs shape (..., 3)).

    Rays that hit nothing within ``scene.max_range`` (in units of t) return inf.
    """
    dirs = np.asarray(dirs, dtype=float)
    shape = dirs.shape[:-1]
    d = dirs.reshape(-1, 3)
    ox, oy, oz = (float(c) for c in origin)
    best = np.full(d.shape[0], np.inf)
    dh = d[:, :2]
    for w in scene.walls:
        a = np.array(w.p0)
        e = np.array(w.p1) - a
        denom = dh[:, 0] * e[1] - dh[:, 1] * e[0]
        ao = a - (ox, oy)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ao[0] * e[1] - ao[1] * e[0]) / denom
            s = (ao[0] * dh[:, 1] - ao[1] * dh[:, 0]) / denom
            z = oz + t * d[:, 2]
        hit = (denom != 0) & (t > 1e-9) & (s >= 0) & (s <= 1) & (z >= w.z_min) & (z <= w.z_max)
        best = np.where(hit & (t < best), t, best)
    with np.errstate(divide="ignore", invalid="ignore"):
        if scene.floor:
            t = -oz / d[:, 2]
            hit = (d[:, 2] < 0) & (t > 1e-9)
            best = np.where(hit & (t < best), t, best)
        if scene.ceiling is not None:
            t = (scene.ceiling - oz) / d[:, 2]
            hit = (d[:, 2] > 0) & (t > 1e-9)
            best = np.where(hit & (t < best), t, best)
    return best.reshape(shape)


@dataclass(frozen=True)
class DepthImage:
    values: np.ndarray  # (height, width) camera-frame Z in meters
    max_range: float = DEFAULT_MAX_RANGE

    @property
    def hit(self) -> np.ndarray:
        return self.values < self.max_range


def _require_free(scene: Scene, pose: Pose2D):
    if not scene.is_free(pose.x, pose.y):
        raise OutsideFreeSpace(f"pose {pose} is not inside free space")


def render_depth(scene: Scene, pose: Pose2D, cam: CameraIntrinsics) -> DepthImage:
    _require_free(scene, pose)
    rays_world = pixel_rays(cam) @ camera_axes(pose)
    # unit-Z camera rays, so the ray parameter equals camera-frame depth
    t = cast_rays(scene, camera_origin(pose, cam), rays_world)
    return DepthImage(np.minimum(t, scene.max_range), scene.max_range)


@dataclass(frozen=True)
class CorrespondenceMap:
    dx: np.ndarray  # (height, width)
    dy: np.ndarray
    valid: np.ndarray

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    def as_channels(self) -> np.ndarray:
        """Two-channel (2, height, width) array with zeros at invalid pixels."""
        return np.stack([np.where(self.valid, self.dx, 0.0), np.where(self.valid, self.dy, 0.0)])

    @classmethod
    def empty(cls, height: int, width: int) -> "CorrespondenceMap":
        z = np.zeros((height, width))
        return cls(z, z.copy(), np.zeros((height, width), dtype=bool))


def correspondence_map(scene: Scene, current: Pose2D, goal: Pose2D, cam: CameraIntrinsics,
                       occlusion_eps: float = OCCLUSION_EPS,
                       depth: Optional[DepthImage] = None) -> CorrespondenceMap:
    """Per-pixel offset from each pixel of the current view to its match in the goal view."""
    _require_free(scene, goal)
    if depth is None:
        depth = render_depth(scene, current, cam)
    u, v = cam.pixel_grid()
    Z = depth.values
    pts_cur = pixel_rays(cam) * Z[..., None]
    pts_world = pts_cur @ camera_axes(current) + camera_origin(current, cam)
    pts_goal = world_to_camera_array(pts_world, goal, cam)
    qu, qv, visible = project_array(pts_goal, cam, tol=1e-9)
    visible &= depth.hit

    # visibility in the goal view: cast the exact ray through the point
    Zg = pts_goal[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        rays_goal = pts_goal / Zg[..., None]
    t = np.full(Z.shape, -np.inf)
    if np.any(visible):
        t[visible] = cast_rays(scene, camera_origin(goal, cam),
                               rays_goal[visible] @ camera_axes(goal))
    valid = visible & (t >= Zg - occlusion_eps)

    dx = np.where(valid, qu - u, 0.0)
    dy = np.where(valid, qv - v, 0.0)
    return CorrespondenceMap(dx, dy, valid)


def smooth_map(m: CorrespondenceMap, kernel: int = 5) -> CorrespondenceMap:
    """Box average over valid neighbours only."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be a positive odd integer, got {kernel}")
    if kernel == 1:
        return m
    w = m.valid.astype(float)
    count = ndimage.uniform_filter(w, size=kernel, mode="constant")
    sx = ndimage.uniform_filter(np.where(m.valid, m.dx, 0.0), size=kernel, mode="constant")
    sy = ndimage.uniform_filter(np.where(m.valid, m.dy, 0.0), size=kernel, mode="constant")
    # uniform_filter leaves ~1e-17 residue where the window is empty
    valid = count > 0.5 / kernel**2
    safe = np.where(valid, count, 1.0)
    return CorrespondenceMap(np.where(valid, sx / safe, 0.0), np.where(valid, sy / safe, 0.0), valid)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    coverage: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must be in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.sigma == 0 and self.coverage == 1.0


def inject_noise(m: CorrespondenceMap, n: NoiseSpec,
                 rng: Optional[np.random.Generator] = None) -> CorrespondenceMap:
    """Gaussian offset noise followed by coverage dropout, per valid pixel."""
    if n.is_identity:
        return m
    if rng is None:
        rng = np.random.default_rng(n.rng_seed)
    shape = m.valid.shape
    noise = rng.normal(0.0, 1.0, size=(2,) + shape) * n.sigma
    keep = rng.random(shape) < n.coverage
    valid = m.valid & keep
    dx = np.where(valid, m.dx + noise[0], 0.0)
    dy = np.where(valid, m.dy + noise[1], 0.0)
    return CorrespondenceMap(dx, dy, valid)


def overlap_count(m: CorrespondenceMap) -> int:
    return m.valid_count


_CORR_HEADER = struct.Struct("<4sII")


def dump_correspondence(m: CorrespondenceMap) -> bytes:
    h, w = m.valid.shape
    return b"".join([
        _CORR_HEADER.pack(b"CORR", w, h),
        np.ascontiguousarray(m.dx, dtype="<f4").tobytes(),
        np.ascontiguousarray(m.dy, dtype="<f4").tobytes(),
        np.ascontiguousarray(m.valid, dtype=np.uint8).tobytes(),
    ])


def load_correspondence(data: bytes) -> CorrespondenceMap:
    magic, w, h = _CORR_HEADER.unpack_from(data, 0)
    if magic != b"CORR":
        raise ValueError("not a correspondence map file")
    n = w * h
    off = _CORR_HEADER.size
    expected = off + 8 * n + n
    if len(data) != expected:
        raise ValueError(f"truncated correspondence file: {len(data)} != {expected} bytes")
    dx = np.frombuffer(data, "<f4", n, off).reshape(h, w).astype(float)
    dy = np.frombuffer(data, "<f4", n, off + 4 * n).reshape(h, w).astype(float)
    valid = np.frombuffer(data, np.uint8, n, off + 8 * n).reshape(h, w).astype(bool)
    return CorrespondenceMap(dx, dy, valid)


def save_correspondence(m: CorrespondenceMap, path) -> None:
    Path(path).write_bytes(dump_correspondence(m))


def read_correspondence(path) -> CorrespondenceMap:
    return load_correspondence(Path(path).read_bytes())
