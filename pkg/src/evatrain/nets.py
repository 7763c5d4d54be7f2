"""Actor and critic networks.

Everything runs in float64: the exported file must reproduce the consumer's
forward pass to 1e-6, and double precision makes that bound slack instead of
a fight with accumulation order.

The actor's deterministic path is required to match the consumer's inference
exactly: normalize the observation, ReLU trunk, a 6-wide linear head split
into a 3-vector mean and a log-std clamped to [-20, 2], then tanh(mean)
scaled to kilometers.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

_LOG_2PI = math.log(2.0 * math.pi)


def _mlp(dims: list[int]) -> nn.Sequential:
    """Linear+ReLU trunk with a bare linear head."""
    layers: list[nn.Module] = []
    for a, b in zip(dims[:-2], dims[1:-1]):
        layers += [nn.Linear(a, b), nn.ReLU()]
    layers.append(nn.Linear(dims[-2], dims[-1]))
    return nn.Sequential(*layers)


class Actor(nn.Module):
    """Squashed-Gaussian policy over a normalized observation."""

    def __init__(self, obs_dim: int, hidden, action_scale: float,
                 obs_mean, obs_std):
        super().__init__()
        self.net = _mlp([obs_dim, *hidden, 6]).double()
        self.action_scale = float(action_scale)
        self.register_buffer(
            "obs_mean", torch.as_tensor(np.asarray(obs_mean, dtype=float)))
        self.register_buffer(
            "obs_std", torch.as_tensor(np.asarray(obs_std, dtype=float)))

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = (obs - self.obs_mean) / self.obs_std
        out = self.net(h)
        mean = out[..., :3]
        log_std = out[..., 3:].clamp(LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def sample(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Reparameterized action and its log-probability.

        The squash correction uses the softplus identity
        log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u)) to stay finite for
        large pre-activations.
        """
        mean, log_std = self(obs)
        std = log_std.exp()
        noise = torch.randn_like(mean)
        pre = mean + std * noise
        action = torch.tanh(pre) * self.action_scale
        log_prob = (-0.5 * (noise ** 2 + _LOG_2PI) - log_std).sum(-1)
        log_prob = log_prob - (
            2.0 * (math.log(2.0) - pre - F.softplus(-2.0 * pre))).sum(-1)
        log_prob = log_prob - 3.0 * math.log(self.action_scale)
        return action, log_prob

    @torch.no_grad()
    def act(self, obs_np: np.ndarray, deterministic: bool) -> np.ndarray:
        obs = torch.as_tensor(np.asarray(obs_np, dtype=float))
        if deterministic:
            mean, _ = self(obs)
            action = torch.tanh(mean) * self.action_scale
        else:
            action, _ = self.sample(obs)
        return action.numpy()


class TwinCritic(nn.Module):
    """Two Q heads over (normalized obs, action rescaled to [-1, 1]^3)."""

    def __init__(self, obs_dim: int, hidden, action_scale: float,
                 obs_mean, obs_std):
        super().__init__()
        self.q1 = _mlp([obs_dim + 3, *hidden, 1]).double()
        self.q2 = _mlp([obs_dim + 3, *hidden, 1]).double()
        self.action_scale = float(action_scale)
        self.register_buffer(
            "obs_mean", torch.as_tensor(np.asarray(obs_mean, dtype=float)))
        self.register_buffer(
            "obs_std", torch.as_tensor(np.asarray(obs_std, dtype=float)))

    def forward(self, obs: torch.Tensor,
                action: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = (obs - self.obs_mean) / self.obs_std
        x = torch.cat([h, action / self.action_scale], dim=-1)
        return self.q1(x).squeeze(-1), self.q2(x).squeeze(-1)
