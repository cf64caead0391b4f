"""Episode MDP for the learned controller."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .geom import CameraIntrinsics, Pose2D, normalize_angle
from .metrics import SUCCESS_RADIUS, RewardSpec, d_polar, is_success
from .worldsim import (
    CorrespondenceMap,
    NoiseSpec,
    Scene,
    correspondence_map,
    inject_noise,
    smooth_map,
)

ACTION_DELTAS = (-math.pi / 4, -math.pi / 6, -math.pi / 15, 0.0, math.pi / 15, math.pi / 6,
                 math.pi / 4)
N_ACTIONS = len(ACTION_DELTAS)
STEP_LEN = 0.1
STRAIGHT = 3
ROBOT_RADIUS = 0.15
CLEARANCE = 0.2
MIN_OVERLAP = 256
MAX_REJECTIONS = 10_000


class SamplingExhausted(RuntimeError):
    pass


class EpisodeTerminated(RuntimeError):
    pass


def apply_action(pose: Pose2D, a: int) -> Pose2D:
    """Turn by the action's heading offset, then drive STEP_LEN forward."""
    if not 0 <= a < N_ACTIONS:
        raise IndexError(f"action index {a} out of range")
    theta = normalize_angle(pose.theta + ACTION_DELTAS[a])
    return Pose2D(pose.x + STEP_LEN * math.cos(theta), pose.y + STEP_LEN * math.sin(theta), theta)


@dataclass(frozen=True)
class EpisodeSpec:
    scene_seed: int
    start: Pose2D
    goal: Pose2D
    max_steps: int = 50
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    smoothing: int = 5
    success_radius: float = SUCCESS_RADIUS


@dataclass(frozen=True)
class SamplingRanges:
    min_dist: float = 0.5
    max_dist: float = 4.0
    max_bearing: float = math.pi / 4
    max_heading: float = math.pi / 4
    min_overlap: int = MIN_OVERLAP
    clearance: float = CLEARANCE
    robot_radius: float = ROBOT_RADIUS


def sample_episode(scene: Scene, rng: np.random.Generator, cam: CameraIntrinsics,
                   ranges: SamplingRanges = SamplingRanges(), max_steps: int = 50,
                   noise: NoiseSpec = NoiseSpec(), smoothing: int = 5) -> EpisodeSpec:
    """Rejection-sample a start/goal pair satisfying the range and overlap constraints."""
    xmin, ymin, xmax, ymax = scene.bounds
    margin = ranges.robot_radius + ranges.clearance
    for _ in range(MAX_REJECTIONS):
        x, y = rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)
        theta = rng.uniform(-math.pi, math.pi)
        dist = rng.uniform(ranges.min_dist, ranges.max_dist)
        bearing = rng.uniform(-ranges.max_bearing, ranges.max_bearing)
        heading = rng.uniform(-ranges.max_heading, ranges.max_heading)
        if not scene.is_free(x, y, margin):
            continue
        gx = x + dist * math.cos(theta + bearing)
        gy = y + dist * math.sin(theta + bearing)
        if not scene.is_free(gx, gy, margin):
            continue
        start = Pose2D(x, y, theta)
        goal = Pose2D(gx, gy, theta + heading)
        m = correspondence_map(scene, start, goal, cam)
        if m.valid_count < ranges.min_overlap:
            continue
        return EpisodeSpec(scene.rng_seed, start, goal, max_steps, noise, smoothing)
    raise SamplingExhausted(f"no valid episode after {MAX_REJECTIONS} rejections")


@dataclass
class Transition:
    observation: np.ndarray  # (2, H, W)
    action: int
    reward: float
    next_observation: np.ndarray
    terminal: bool
    success: bool = False


@dataclass(frozen=True)
class EnvConfig:
    reward: RewardSpec = field(default_factory=RewardSpec)
    robot_radius: float = ROBOT_RADIUS
    terminate_on_overlap_loss: bool = False
    min_overlap: int = MIN_OVERLAP


class ServoEnv:
    """One episode of learned visual servoing in a fixed scene."""

    def __init__(self, scene: Scene, spec: EpisodeSpec, cam: CameraIntrinsics,
                 config: EnvConfig = EnvConfig(), seed: int = 0):
        self.scene = scene
        self.spec = spec
        self.cam = cam
        self.config = config
        self.seed = seed
        self.pose = spec.start
        self.steps = 0
        self.done = False
        self.success = False
        self.d_init = config.reward.distance(spec.start, spec.goal)
        self.d_prev = self.d_init
        self.valid_count = 0
        self.log: List[dict] = []
        self.observation = self._observe()
        if is_success(self.pose, spec.goal, spec.success_radius):
            self.done = self.success = True

    def _observe(self) -> np.ndarray:
        m = correspondence_map(self.scene, self.pose, self.spec.goal, self.cam)
        if not self.spec.noise.is_identity:
            ss = np.random.SeedSequence([self.spec.noise.rng_seed, self.seed, self.steps])
            m = inject_noise(m, self.spec.noise, np.random.default_rng(ss))
        self.raw_valid_count = m.valid_count
        m = smooth_map(m, self.spec.smoothing)
        self.valid_count = m.valid_count
        return m.as_channels()

    def step(self, a: int) -> Transition:
        if self.done:
            raise EpisodeTerminated("episode already finished")
        nxt = apply_action(self.pose, a)
        if self.scene.is_free(nxt.x, nxt.y) and self.scene.segment_clear(
                self.pose.xy, nxt.xy, self.config.robot_radius):
            self.pose = nxt
        self.steps += 1
        goal = self.spec.goal
        d_t = self.config.reward.distance(self.pose, goal)
        r = self.config.reward.reward(self.d_prev, d_t, self.d_init)
        self.d_prev = d_t
        obs = self.observation
        self.observation = self._observe()
        self.success = is_success(self.pose, goal, self.spec.success_radius)
        lost = (self.config.terminate_on_overlap_loss
                and self.raw_valid_count < self.config.min_overlap)
        self.done = self.success or self.steps >= self.spec.max_steps or lost
        self.log.append({
            "step": self.steps,
            "pose": [self.pose.x, self.pose.y, self.pose.theta],
            "action": int(a),
            "reward": r,
            "d_polar": d_polar(self.pose, goal),
            "valid_count": self.raw_valid_count,
        })
        return Transition(obs, int(a), r, self.observation, self.done, self.success)

    def log_jsonl(self) -> str:
        return "".join(json.dumps(row) + "\n" for row in self.log)
