"""Soft actor-critic updates: twin-Q targets, polyak averaging, and automatic
entropy temperature tuned toward a target entropy."""

from __future__ import annotations

import copy

import numpy as np
import torch
from torch.nn import functional as F

from .nets import Actor, TwinCritic


class SacAgent:
    def __init__(self, obs_dim: int, hidden, action_scale: float,
                 obs_mean, obs_std, lr: float, gamma: float, tau: float,
                 entropy_target: float):
        self.actor = Actor(obs_dim, hidden, action_scale, obs_mean, obs_std)
        self.critic = TwinCritic(obs_dim, hidden, action_scale, obs_mean, obs_std)
        self.critic_target = copy.deepcopy(self.critic)
        self.critic_target.requires_grad_(False)
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.entropy_target = float(entropy_target)
        self.log_alpha = torch.zeros(1, dtype=torch.float64, requires_grad=True)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=lr)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=lr)

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.detach().exp())

    def update(self, batch: dict) -> dict:
        obs = torch.from_numpy(batch["obs"])
        actions = torch.from_numpy(batch["actions"])
        rewards = torch.from_numpy(batch["rewards"])
        next_obs = torch.from_numpy(batch["next_obs"])
        bootstrap = torch.from_numpy(batch["bootstrap"])
        alpha = self.log_alpha.exp().detach()

        with torch.no_grad():
            next_action, next_logp = self.actor.sample(next_obs)
            tq1, tq2 = self.critic_target(next_obs, next_action)
            next_v = torch.minimum(tq1, tq2) - alpha * next_logp
            target = rewards + self.gamma * bootstrap * next_v

        q1, q2 = self.critic(obs, actions)
        critic_loss = F.mse_loss(q1, target) + F.mse_loss(q2, target)
        self.critic_opt.zero_grad()
        critic_loss.backward()
        self.critic_opt.step()

        new_action, logp = self.actor.sample(obs)
        q1_pi, q2_pi = self.critic(obs, new_action)
        actor_loss = (alpha * logp - torch.minimum(q1_pi, q2_pi)).mean()
        self.actor_opt.zero_grad()
        actor_loss.backward()
        self.actor_opt.step()

        alpha_loss = -(self.log_alpha.exp()
                       * (logp.detach() + self.entropy_target)).mean()
        self.alpha_opt.zero_grad()
        alpha_loss.backward()
        self.alpha_opt.step()

        with torch.no_grad():
            for p, tp in zip(self.critic.parameters(),
                             self.critic_target.parameters()):
                tp.mul_(1.0 - self.tau).add_(p, alpha=self.tau)

        return {
            "critic_loss": float(critic_loss.detach()),
            "actor_loss": float(actor_loss.detach()),
            "alpha": self.alpha,
            "entropy": float(-logp.detach().mean()),
        }
