"""Training loop: wire-protocol data collection, SAC updates, a linear noise
curriculum, periodic deterministic evaluation, and weight export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .buffer import ReplayBuffer
from .client import EnvClient
from .config import TrainConfig
from .export import export_weights
from .sac import SacAgent

# Observation std floor: a constant coordinate during warmup must not blow up
# the normalization.
STD_FLOOR = 1e-3

_EP_SEED_STRIDE = 1_000_003
_EVAL_SEED_SALT = 7_919


@dataclass
class EvalPoint:
    step: int
    alpha: float
    mean_reward: float
    std_reward: float
    ci95_lo: float
    ci95_hi: float


@dataclass
class TrainResult:
    export_path: str
    curve_path: str
    evals: list[EvalPoint] = field(default_factory=list)
    obs_mean: np.ndarray | None = None
    obs_std: np.ndarray | None = None
    # The live agent, for callers that want to keep training or cross-check
    # the export against the in-memory network.
    agent: object | None = None


def curriculum_alpha(step: int, cfg: TrainConfig) -> float:
    """Noise scale for an episode starting at environment step ``step``.

    Flat at 0 through ``curriculum_start``, flat at 1 from ``curriculum_end``,
    linear in between. With both breakpoints at ``total_steps`` the whole run
    stays at 0.
    """
    if step <= cfg.curriculum_start:
        return 0.0
    if step >= cfg.curriculum_end:
        return 1.0
    span = cfg.curriculum_end - cfg.curriculum_start
    return (step - cfg.curriculum_start) / span


def episode_seed(cfg: TrainConfig, index: int) -> int:
    return _EP_SEED_STRIDE * cfg.seed + index


def eval_seeds(cfg: TrainConfig) -> list[int]:
    """One fixed scenario set per config: every evaluation replays the same
    episodes, so curve movement is policy movement."""
    base = _EP_SEED_STRIDE * (cfg.seed + _EVAL_SEED_SALT)
    return [base + j for j in range(cfg.eval_episodes)]


def _is_terminal(done: bool, info: dict) -> float:
    """Bootstrap weight for the successor state: 0 only when the episode
    actually failed out, 1 when it merely hit the horizon (or continues)."""
    if done and info.get("done_reason") == "deviation-cutoff":
        return 0.0
    return 1.0


def rollout_reward(client: EnvClient, actor, seed: int, alpha: float) -> float:
    """Sum of rewards for one deterministic episode."""
    obs = client.reset(seed=seed, alpha=alpha)
    total = 0.0
    done = False
    while not done:
        action = actor.act(obs, deterministic=True)
        obs, reward, done, _ = client.step(action)
        total += reward
    return total


def _evaluate(client: EnvClient, actor, cfg: TrainConfig, step: int,
              alpha: float) -> EvalPoint:
    rewards = np.array([rollout_reward(client, actor, s, alpha)
                        for s in eval_seeds(cfg)])
    mean = float(rewards.mean())
    std = float(rewards.std(ddof=1)) if len(rewards) > 1 else 0.0
    half = 1.96 * std / math.sqrt(len(rewards))
    return EvalPoint(step, alpha, mean, std, mean - half, mean + half)


def write_curve(path: str, evals: list[EvalPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "alpha", "mean_reward", "std_reward",
                         "ci95_lo", "ci95_hi"])
        for p in evals:
            writer.writerow([p.step, repr(p.alpha), repr(p.mean_reward),
                             repr(p.std_reward), repr(p.ci95_lo),
                             repr(p.ci95_hi)])


def train(cfg: TrainConfig) -> TrainResult:
    """Run one training session against a live environment server.

    Side effects: seeds torch's global generator from ``cfg.seed`` (so a rerun
    of the same config reproduces the learning curve byte for byte), writes
    the weight file to ``cfg.export_path`` and the curve CSV to
    ``cfg.curve_path``. A protocol desync on either connection aborts the run
    with the recent exchange transcript attached to the exception.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    with EnvClient(cfg.host, cfg.port) as env, \
            EnvClient(cfg.host, cfg.port) as eval_env:
        episodes = 0
        obs = env.reset(seed=episode_seed(cfg, episodes),
                        alpha=curriculum_alpha(0, cfg))
        obs_dim = obs.shape[0]
        buffer = ReplayBuffer(cfg.replay_capacity, obs_dim)

        # Warmup: uniform random goal offsets, observation statistics.
        norm_rows = [obs]
        for step in range(1, cfg.warmup_steps + 1):
            action = rng.uniform(-cfg.action_scale, cfg.action_scale, size=3)
            next_obs, reward, done, info = env.step(action)
            buffer.push(obs, action, reward, next_obs, _is_terminal(done, info))
            norm_rows.append(next_obs)
            if done:
                episodes += 1
                obs = env.reset(seed=episode_seed(cfg, episodes),
                                alpha=curriculum_alpha(step, cfg))
                norm_rows.append(obs)
            else:
                obs = next_obs
        stacked = np.stack(norm_rows)
        obs_mean = stacked.mean(axis=0)
        obs_std = np.maximum(stacked.std(axis=0), STD_FLOOR)

        agent = SacAgent(obs_dim, cfg.hidden, cfg.action_scale,
                         obs_mean, obs_std, cfg.lr, cfg.gamma, cfg.tau,
                         cfg.entropy_target)

        evals: list[EvalPoint] = []
        for step in range(cfg.warmup_steps + 1, cfg.total_steps + 1):
            action = agent.actor.act(obs, deterministic=False)
            next_obs, reward, done, info = env.step(action)
            buffer.push(obs, action, reward, next_obs, _is_terminal(done, info))
            if done:
                episodes += 1
                obs = env.reset(seed=episode_seed(cfg, episodes),
                                alpha=curriculum_alpha(step, cfg))
            else:
                obs = next_obs

            if len(buffer) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    agent.update(buffer.sample(cfg.batch_size, rng))

            if step % cfg.eval_every == 0:
                evals.append(_evaluate(eval_env, agent.actor, cfg, step,
                                       curriculum_alpha(step, cfg)))

    write_curve(cfg.curve_path, evals)
    export_weights(agent.actor, cfg.export_path)
    return TrainResult(export_path=cfg.export_path, curve_path=cfg.curve_path,
                       evals=evals, obs_mean=obs_mean, obs_std=obs_std,
                       agent=agent)
