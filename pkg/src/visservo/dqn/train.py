"""Deep Q-learning with replay and a target network, plus greedy-policy evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..env import EnvConfig, EpisodeSpec, SamplingRanges, ServoEnv, sample_episode
from ..geom import CameraIntrinsics, Pose2D
from ..metrics import RewardSpec, d_polar
from ..worldsim import NoiseSpec, Scene
from .layers import huber
from .network import N_ACTIONS, QNetwork, act_greedy
from .replay import ReplayMemory

log = logging.getLogger(__name__)

Policy = Callable[[np.ndarray], int]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20_000  # parameter updates
    batch: int = 128
    lr: float = 1e-5
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_fraction: float = 0.5  # share of training over which epsilon decays linearly
    target_sync: int = 1000
    replay_capacity: int = 10_000
    warmup: int = 1000  # random-policy transitions collected before the first update
    steps_per_update: int = 1
    huber_delta: float = 1.0
    eval_every: int = 1000
    zero_head: bool = False  # start with Q = 0 everywhere
    reward: RewardSpec = field(default_factory=RewardSpec)
    max_steps: int = 50
    smoothing: int = 5
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("discount must lie in [0, 1)")
        if self.batch < 1 or self.target_sync < 1 or self.steps_per_update < 1:
            raise ValueError("batch, target_sync and steps_per_update must be positive")
        if not 0 < self.eps_fraction <= 1:
            raise ValueError("eps_fraction must lie in (0, 1]")

    def epsilon(self, it: int) -> float:
        """Exploration rate before update ``it`` (0-based)."""
        horizon = max(1, int(round(self.eps_fraction * self.iterations)))
        frac = min(it / horizon, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


class RMSprop:
    """Running average of squared gradients; update = lr * g / (sqrt(avg) + eps)."""

    def __init__(self, net: QNetwork, lr: float, decay: float = 0.99, eps: float = 1e-8):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.sq = {k: np.zeros_like(v) for k, v in net.named_params().items()}

    def step(self, net: QNetwork) -> None:
        for name, layer in net.layers:
            for k, p in layer.params.items():
                g = layer.grads[k]
                s = self.sq[f"{name}.{k}"]
                s *= self.decay
                s += (1 - self.decay) * g * g
                p -= (self.lr * g / (np.sqrt(s) + self.eps)).astype(p.dtype)


# --- targets and loss -------------------------------------------------------

def td_targets(rewards, terminals, next_q, gamma: float) -> np.ndarray:
    """r for terminal transitions, otherwise r + gamma * max_a' Q_target(s', a')."""
    rewards = np.asarray(rewards, dtype=np.float64)
    boot = np.asarray(next_q, dtype=np.float64).max(axis=-1)
    return np.where(np.asarray(terminals, dtype=bool), rewards, rewards + gamma * boot)


def td_target(transition, target_net: QNetwork, gamma: float) -> float:
    if transition.terminal:
        return float(transition.reward)
    q = target_net.forward(transition.next_observation, train=False)
    return float(transition.reward + gamma * np.max(q))


def q_loss(q: np.ndarray, actions: np.ndarray, targets: np.ndarray, delta: float = 1.0):
    """Huber loss on the taken actions only; returns (loss, dL/dq)."""
    n = q.shape[0]
    picked = q[np.arange(n), actions]
    loss, g = huber(picked, targets.astype(q.dtype), delta)
    grad = np.zeros_like(q)
    grad[np.arange(n), actions] = g
    return loss, grad


def update(net: QNetwork, target: QNetwork, opt: RMSprop, batch, gamma: float,
           delta: float = 1.0) -> float:
    obs, actions, rewards, next_obs, terminals = batch
    next_q = target.forward(next_obs, train=False)
    y = td_targets(rewards, terminals, next_q, gamma)
    net.zero_grad()
    q = net.forward(obs, train=True)
    loss, grad = q_loss(q, actions, y, delta)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")
    net.backward(grad)
    opt.step(net)
    return loss


# --- episodes ---------------------------------------------------------------

@dataclass
class EpisodeSource:
    """Scenes plus the sampling protocol; draws fresh start/goal pairs on demand."""
    scenes: Sequence[Scene]
    cam: CameraIntrinsics
    ranges: SamplingRanges = field(default_factory=SamplingRanges)
    max_steps: int = 50
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    smoothing: int = 5

    def sample(self, rng: np.random.Generator) -> Tuple[Scene, EpisodeSpec]:
        scene = self.scenes[int(rng.integers(len(self.scenes)))]
        return scene, sample_episode(scene, rng, self.cam, self.ranges, self.max_steps,
                                     self.noise, self.smoothing)

    def suite(self, n: int, seed: int) -> List[Tuple[Scene, EpisodeSpec]]:
        """A fixed list of ``n`` episodes; episode i depends only on (seed, i)."""
        out = []
        for i in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
            out.append(self.sample(rng))
        return out


@dataclass
class PolicyResult:
    poses: List[Pose2D]
    actions: List[int]
    valid_counts: List[int]
    success: bool
    outcome: str

    @property
    def steps(self) -> int:
        return len(self.actions)

    def final_d_polar(self, goal: Pose2D) -> float:
        return d_polar(self.poses[-1], goal)


def run_policy_episode(policy: Policy, scene: Scene, spec: EpisodeSpec, cam: CameraIntrinsics,
                       env_config: EnvConfig = EnvConfig(), seed: int = 0) -> PolicyResult:
    env = ServoEnv(scene, spec, cam, env_config, seed)
    poses, actions, counts = [env.pose], [], [env.raw_valid_count]
    while not env.done:
        a = int(policy(env.observation))
        env.step(a)
        poses.append(env.pose)
        actions.append(a)
        counts.append(env.raw_valid_count)
    if env.success:
        outcome = "Success"
    elif env.steps >= spec.max_steps:
        outcome = "MaxSteps"
    else:
        outcome = "CorrespondenceLost"
    return PolicyResult(poses, actions, counts, env.success, outcome)


def greedy_policy(net: QNetwork) -> Policy:
    return lambda obs: act_greedy(net.forward(obs, train=False))


def random_policy(seed: int = 0) -> Policy:
    rng = np.random.default_rng(seed)
    return lambda obs: int(rng.integers(N_ACTIONS))


def evaluate(policy: Policy, suite: Sequence[Tuple[Scene, EpisodeSpec]], cam: CameraIntrinsics,
             env_config: EnvConfig = EnvConfig()) -> List[PolicyResult]:
    return [run_policy_episode(policy, sc, sp, cam, env_config, seed=i)
            for i, (sc, sp) in enumerate(suite)]


def success_rate(results: Sequence[PolicyResult]) -> float:
    return sum(r.success for r in results) / len(results)


# --- training ---------------------------------------------------------------

@dataclass
class CurvePoint:
    iteration: int
    loss: float
    eval_success_rate: float


@dataclass
class TrainResult:
    net: QNetwork
    curve: List[CurvePoint]

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "eval_success_rate"])
        for p in self.curve:
            w.writerow([p.iteration, repr(p.loss), repr(p.eval_success_rate)])
        return buf.getvalue()


def train(source: EpisodeSource, cfg: TrainConfig, seed: int = 0,
          eval_suite: Optional[Sequence[Tuple[Scene, EpisodeSpec]]] = None,
          net: Optional[QNetwork] = None) -> TrainResult:
    """epsilon-greedy rollouts interleaved with minibatch Q-learning updates.

    Every ``eval_every`` updates (and after the last one) the greedy policy is
    scored on ``eval_suite``. The run is a pure function of ``seed``.
    """
    cam = source.cam
    net = net if net is not None else QNetwork(cam.height, cam.width, seed=seed,
                                               zero_head=cfg.zero_head)
    curve: List[CurvePoint] = []
    if cfg.iterations == 0:
        return TrainResult(net, curve)
    target = net.clone()
    opt = RMSprop(net, cfg.lr, cfg.rms_decay, cfg.rms_eps)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD0]))
    memory = ReplayMemory(cfg.replay_capacity, (2, cam.height, cam.width))
    env_cfg = EnvConfig(reward=cfg.reward)
    env: Optional[ServoEnv] = None
    episodes = 0

    def act_and_store(eps: float):
        nonlocal env, episodes
        if env is None or env.done:
            scene, spec = source.sample(rng)
            env = ServoEnv(scene, spec, cam, env_cfg, seed=episodes)
            episodes += 1
            if env.done:  # sampled already inside the goal disc
                return
        obs = env.observation
        if rng.random() < eps:
            a = int(rng.integers(N_ACTIONS))
        else:
            a = act_greedy(net.forward(obs, train=False))
        t = env.step(a)
        memory.push(t.observation, t.action, t.reward, t.next_observation, t.terminal)

    for _ in range(cfg.warmup):
        act_and_store(1.0)
    losses: List[float] = []
    for it in range(cfg.iterations):
        eps = cfg.epsilon(it)
        for _ in range(cfg.steps_per_update):
            act_and_store(eps)
        losses.append(update(net, target, opt, memory.sample(rng, cfg.batch), cfg.gamma,
                             cfg.huber_delta))
        done = it + 1
        if done % cfg.target_sync == 0:
            target = net.clone()
        if done % cfg.eval_every == 0 or done == cfg.iterations:
            rate = float("nan")
            if eval_suite:
                rate = success_rate(evaluate(greedy_policy(net), eval_suite, cam, env_cfg))
            curve.append(CurvePoint(done, float(np.mean(losses)), rate))
            log.info("iter %d loss %.4g eps %.3f eval %.3f", done, curve[-1].loss, eps, rate)
            losses = []
    return TrainResult(net, curve)

