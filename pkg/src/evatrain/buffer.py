"""Flat ring-buffer replay storage. Single-threaded by design: the training
loop is the only reader and writer, so no locking is needed or provided."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, action_dim: int = 3):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        # 1.0 where the successor state should be bootstrapped from, 0.0 where
        # the episode genuinely ended (horizon truncation keeps the bootstrap).
        self.bootstrap = np.ones(capacity)
        self.size = 0
        self._next = 0

    def push(self, obs, action, reward, next_obs, bootstrap) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.bootstrap[i] = bootstrap
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size < 1:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "bootstrap": self.bootstrap[idx],
        }

    def __len__(self) -> int:
        return self.size
