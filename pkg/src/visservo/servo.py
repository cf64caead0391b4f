"""Classical image-based visual servoing for a planar robot.

The interaction matrix maps the camera twist (vx, vz, wy) to pixel
velocities. vx is lateral (camera right), vz forward along the optical
axis and wy is the rotation rate about the camera's down axis, so a
positive wy turns the robot clockwise seen from above.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .geom import CameraIntrinsics, Pose2D
from .metrics import SUCCESS_RADIUS, d_polar, first_entry, interpolate_pose, is_success
from .worldsim import (
    CorrespondenceMap,
    DepthImage,
    NoiseSpec,
    Scene,
    correspondence_map,
    inject_noise,
    overlap_count,
    render_depth,
)

log = logging.getLogger(__name__)

DAMPING = 1e-6
SINGULAR_THRESHOLD = 1e-8
MAX_LINEAR = 0.5
MAX_ANGULAR = math.pi / 2
MIN_OVERLAP = 256
NODEPTH_SPEED = 0.1
MIN_NOISY_DEPTH = 0.05


class FeatureStarvation(RuntimeError):
    pass


class DegenerateJacobian(RuntimeError):
    pass


@dataclass(frozen=True)
class PixelFeature:
    u: float
    v: float
    u_star: float
    v_star: float
    Z: Optional[float] = None  # None until a depth policy has been applied

    def __post_init__(self):
        if self.Z is not None and not self.Z > 0:
            raise ValueError(f"feature depth must be positive, got {self.Z}")


class RobotTwist(NamedTuple):
    vx: float
    vz: float
    wy: float


@dataclass(frozen=True)
class DepthPolicy:
    kind: str = "GroundTruth"  # GroundTruth | Constant | Noisy | None
    value: float = 4.0
    sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("GroundTruth", "Constant", "Noisy", "None"):
            raise ValueError(f"unknown depth policy {self.kind!r}")
        if self.kind == "Constant" and not self.value > 0:
            raise ValueError("constant depth must be positive")
        if self.sigma < 0:
            raise ValueError("depth noise sigma must be non-negative")

    @classmethod
    def ground_truth(cls):
        return cls("GroundTruth")

    @classmethod
    def constant(cls, value: float = 4.0):
        return cls("Constant", value=value)

    @classmethod
    def noisy(cls, sigma: float = 0.5, seed: int = 0):
        return cls("Noisy", sigma=sigma, seed=seed)

    @classmethod
    def none(cls):
        return cls("None")

    @property
    def label(self) -> str:
        return {"GroundTruth": "GtDepth", "Constant": "ConstantDepth", "Noisy": "NoisyDepth",
                "None": "NoDepth"}[self.kind]


def select_features(m: CorrespondenceMap, k: int = 4,
                    min_separation: Optional[float] = None) -> List[PixelFeature]:
    """Greedy pick of the ``k`` largest offsets that stay ``min_separation`` pixels apart."""
    if k < 2:
        raise ValueError("at least two features are needed")
    if min_separation is None:
        min_separation = m.width / 8
    rows, cols = np.nonzero(m.valid)  # raster order
    mag = np.hypot(m.dx[rows, cols], m.dy[rows, cols])
    order = np.argsort(-mag, kind="stable")
    chosen: List[PixelFeature] = []
    for i in order:
        u, v = float(cols[i]), float(rows[i])
        if all(abs(u - f.u) >= min_separation for f in chosen):
            chosen.append(PixelFeature(u, v, u + float(m.dx[rows[i], cols[i]]),
                                       v + float(m.dy[rows[i], cols[i]])))
            if len(chosen) == k:
                break
    if len(chosen) < 2:
        raise FeatureStarvation(f"only {len(chosen)} usable correspondences")
    return chosen


def interaction_row(f: PixelFeature, cam: CameraIntrinsics) -> np.ndarray:
    """2x3 block of the planar interaction matrix, columns (vx, vz, wy)."""
    if f.Z is None or not f.Z > 0:
        raise ValueError("interaction rows need a positive depth")
    lam = cam.focal
    x = f.u - cam.u0
    y = f.v - cam.v0
    Z = f.Z
    return np.array([
        [-lam / Z, x / Z, -(lam + x * x / lam)],
        [0.0, y / Z, -x * y / lam],
    ])


def interaction_matrix(features: Sequence[PixelFeature], cam: CameraIntrinsics) -> np.ndarray:
    return np.vstack([interaction_row(f, cam) for f in features])


def feature_error(features: Sequence[PixelFeature]) -> np.ndarray:
    return np.array([c for f in features for c in (f.u_star - f.u, f.v_star - f.v)])


def clamp_twist(t: RobotTwist, max_linear: float = MAX_LINEAR,
                max_angular: float = MAX_ANGULAR) -> RobotTwist:
    """Scale the whole twist down until every component is within its limit."""
    scale = max(abs(t.vx) / max_linear, abs(t.vz) / max_linear, abs(t.wy) / max_angular, 1.0)
    return RobotTwist(t.vx / scale, t.vz / scale, t.wy / scale)


def damped_pinv_solve(J: np.ndarray, e: np.ndarray, damping: float = DAMPING) -> tuple:
    """Damped least-squares solution of J x = e. Returns (x, smallest singular value)."""
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    smin = float(s[-1]) if s.size else 0.0
    if J.shape[0] < J.shape[1] or smin < SINGULAR_THRESHOLD:
        raise DegenerateJacobian(f"interaction matrix is rank deficient (sigma_min={smin:.3g})")
    x = Vt.T @ ((s / (s * s + damping * damping)) * (U.T @ e))
    return x, smin


NONHOLONOMIC_MODES = ("unicycle", "drop")
HEADING_GAIN = 4.0


def ibvs_twist(features: Sequence[PixelFeature], cam: CameraIntrinsics, gain: float = 0.5,
               holonomic: bool = False, clamp: bool = True, mode: str = "unicycle",
               heading_gain: float = HEADING_GAIN) -> RobotTwist:
    """Stacked pseudo-inverse control law: twist = gain * pinv(J) (f* - f).

    A holonomic robot executes the three-column solution directly. Otherwise
    ``mode`` picks how the lateral degree of freedom is removed: ``"drop"``
    solves with the vx column deleted, ``"unicycle"`` solves the full system
    and folds the lateral command into the yaw rate (see ``unicycle_twist``).
    """
    if not features:
        raise FeatureStarvation("no features")
    if mode not in NONHOLONOMIC_MODES:
        raise ValueError(f"unknown non-holonomic mode {mode!r}")
    J = interaction_matrix(features, cam)
    drop = not holonomic and mode == "drop"
    if drop:
        J = J[:, 1:]
    e = feature_error(features)
    x, smin = damped_pinv_solve(J, e)
    if smin < 1e-3 * np.linalg.norm(J, 2):
        log.debug("ill-conditioned interaction matrix: sigma_min=%.3g", smin)
    x = gain * x
    if drop:
        twist = RobotTwist(0.0, x[0], x[1])
    else:
        twist = RobotTwist(*x)
        if not holonomic:
            twist = unicycle_twist(twist, heading_gain)
    return clamp_twist(twist) if clamp else twist


def unicycle_twist(twist: RobotTwist, heading_gain: float = HEADING_GAIN) -> RobotTwist:
    """Realise a holonomic twist on a differential drive.

    The lateral component is dropped and the robot instead turns toward the
    direction of the commanded planar velocity. The steering angle uses
    |vz| so that it does not jump by pi when the forward command changes sign.
    """
    vx, vz, wy = twist
    if vx == 0.0 and vz == 0.0:
        return RobotTwist(0.0, 0.0, wy)
    # a positive vx (camera right) needs a clockwise turn, i.e. positive wy
    return RobotTwist(0.0, vz, wy + heading_gain * math.atan2(vx, abs(vz)))


def resolve_depth(f: PixelFeature, policy: DepthPolicy, gt: Optional[DepthImage],
                  rng: Optional[np.random.Generator] = None) -> PixelFeature:
    if policy.kind == "None":
        return replace(f, Z=None)
    if policy.kind == "Constant":
        return replace(f, Z=policy.value)
    if gt is None:
        raise ValueError(f"{policy.kind} depth needs a ground-truth depth image")
    row = min(max(int(round(f.v)), 0), gt.values.shape[0] - 1)
    col = min(max(int(round(f.u)), 0), gt.values.shape[1] - 1)
    z = float(gt.values[row, col])
    if policy.kind == "Noisy":
        if rng is None:
            rng = np.random.default_rng(policy.seed)
        z = max(z + rng.normal(0.0, policy.sigma), MIN_NOISY_DEPTH)
    return replace(f, Z=z)


def nodepth_control(features: Sequence[PixelFeature], cam: CameraIntrinsics,
                    gain: float = 0.5) -> RobotTwist:
    """Constant forward speed; yaw rate from a 1-D least-squares fit of horizontal errors."""
    if not features:
        raise FeatureStarvation("no features")
    lam = cam.focal
    j = np.array([-(lam + (f.u - cam.u0) ** 2 / lam) for f in features])
    e = np.array([f.u_star - f.u for f in features])
    wy = gain * float(j @ e) / float(j @ j)
    wy = max(-MAX_ANGULAR, min(MAX_ANGULAR, wy))
    return RobotTwist(0.0, NODEPTH_SPEED, wy)


def integrate_twist(pose: Pose2D, twist: RobotTwist, dt: float) -> Pose2D:
    """Exact constant-twist motion over ``dt`` (robot frame: forward = vz, left = -vx)."""
    v_f, v_l, w = twist.vz, -twist.vx, -twist.wy
    wt = w * dt
    if abs(wt) < 1e-12:
        df, dl = v_f * dt, v_l * dt
    else:
        s, c = math.sin(wt), math.cos(wt)
        df = (v_f * s - v_l * (1.0 - c)) / w
        dl = (v_f * (1.0 - c) + v_l * s) / w
    ct, st = math.cos(pose.theta), math.sin(pose.theta)
    return Pose2D(pose.x + ct * df - st * dl, pose.y + st * df + ct * dl, pose.theta + wt)


# --- closed-loop episodes ---------------------------------------------------

@dataclass(frozen=True)
class IbvsConfig:
    depth: DepthPolicy = field(default_factory=DepthPolicy)
    k: int = 4
    gain: float = 0.5
    holonomic: bool = False
    mode: str = "unicycle"  # how a non-holonomic robot handles the lateral command
    heading_gain: float = HEADING_GAIN
    dt: float = 0.2
    max_steps: int = 150
    min_overlap: int = MIN_OVERLAP
    feature_noise: NoiseSpec = field(default_factory=NoiseSpec)
    success_radius: float = SUCCESS_RADIUS
    robot_radius: float = 0.15
    seed: int = 0


@dataclass
class TraceRow:
    step: int
    x: float
    y: float
    theta: float
    vx: float
    vz: float
    wy: float
    d_polar: float
    overlap_count: int
    outcome: str = ""


TRACE_FIELDS = ["step", "x", "y", "theta", "vx", "vz", "wy", "d_polar", "overlap_count",
                "outcome"]

OUTCOMES = ("Success", "CorrespondenceLost", "DegenerateJacobian", "MaxSteps")


@dataclass
class EpisodeResult:
    trace: List[TraceRow]
    outcome: str

    @property
    def success(self) -> bool:
        return self.outcome == "Success"

    @property
    def steps(self) -> int:
        return self.trace[-1].step

    @property
    def final_pose(self) -> Pose2D:
        r = self.trace[-1]
        return Pose2D(r.x, r.y, r.theta)

    @property
    def final_d_polar(self) -> float:
        return self.trace[-1].d_polar


def trace_to_csv(trace: Sequence[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for r in trace:
        w.writerow([r.step, repr(r.x), repr(r.y), repr(r.theta), repr(r.vx), repr(r.vz),
                    repr(r.wy), repr(r.d_polar), r.overlap_count, r.outcome])
    return buf.getvalue()


def ibvs_episode(scene: Scene, start: Pose2D, goal: Pose2D, cam: CameraIntrinsics,
                 config: IbvsConfig = IbvsConfig()) -> EpisodeResult:
    """Run the IBVS loop until success, loss of correspondence, degeneracy or the step limit."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x1B75]))
    pose = start
    trace: List[TraceRow] = []

    def record(step, twist, overlap, outcome=""):
        trace.append(TraceRow(step, pose.x, pose.y, pose.theta, *twist,
                              d_polar(pose, goal), overlap, outcome))

    zero = RobotTwist(0.0, 0.0, 0.0)
    for step in range(config.max_steps + 1):
        depth = render_depth(scene, pose, cam)
        m = correspondence_map(scene, pose, goal, cam, depth=depth)
        if not config.feature_noise.is_identity:
            m = inject_noise(m, config.feature_noise, rng)
        overlap = overlap_count(m)
        if is_success(pose, goal, config.success_radius):
            record(step, zero, overlap, "Success")
            break
        if step == config.max_steps:
            record(step, zero, overlap, "MaxSteps")
            break
        if overlap < config.min_overlap:
            record(step, zero, overlap, "CorrespondenceLost")
            break
        try:
            feats = select_features(m, config.k)
        except FeatureStarvation:
            record(step, zero, overlap, "CorrespondenceLost")
            break
        feats = [resolve_depth(f, config.depth, depth, rng) for f in feats]
        try:
            if config.depth.kind == "None":
                twist = nodepth_control(feats, cam, config.gain)
            else:
                twist = ibvs_twist(feats, cam, config.gain, config.holonomic,
                                   mode=config.mode, heading_gain=config.heading_gain)
        except DegenerateJacobian:
            record(step, zero, overlap, "DegenerateJacobian")
            break
        record(step, twist, overlap)
        nxt = integrate_twist(pose, twist, config.dt)
        if scene.is_free(nxt.x, nxt.y) and scene.segment_clear(pose.xy, nxt.xy,
                                                              config.robot_radius):
            # halt where the move first enters the success disc
            t = first_entry(pose, nxt, goal, config.success_radius * (1 - 1e-9))
            pose = nxt if t is None else interpolate_pose(pose, nxt, t)
        else:
            # translation blocked; a disc robot can still turn in place
            pose = Pose2D(pose.x, pose.y, nxt.theta)
    return EpisodeResult(trace, trace[-1].outcome)
