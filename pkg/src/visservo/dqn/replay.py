"""Fixed-capacity FIFO replay memory with uniform sampling."""

from __future__ import annotations

from typing import Tuple

import numpy as np


class ReplayMemory:
    """Preallocated ring buffer of (obs, action, reward, next_obs, terminal).

    Observations are stored as float16 to keep a desk-scale buffer of a few
    thousand 2x64x64 maps in memory. Once full, the oldest entry is
    overwritten first.
    """

    def __init__(self, capacity: int, obs_shape: Tuple[int, ...], dtype=np.float16):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, *obs_shape), dtype=dtype)
        self.next_obs = np.zeros((capacity, *obs_shape), dtype=dtype)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs, action: int, reward: float, next_obs, terminal: bool) -> int:
        """Store one transition and return the slot it went into."""
        i = self.cursor
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.terminals[i] = terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def sample_indices(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay memory")
        return rng.integers(0, self.size, size=batch)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = self.sample_indices(rng, batch)
        return (self.obs[idx].astype(np.float32), self.actions[idx], self.rewards[idx],
                self.next_obs[idx].astype(np.float32), self.terminals[idx])
