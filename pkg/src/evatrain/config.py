"""Training configuration: one JSON document drives a run."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path


class TrainConfigError(ValueError):
    """Raised when a training config does not satisfy the schema."""


@dataclass
class TrainConfig:
    """Everything ``train`` needs for one run.

    The environment lives behind ``host``/``port``. ``total_steps`` counts
    environment steps end to end, warmup included. The noise curriculum is a
    linear ramp: alpha is 0 up to ``curriculum_start`` steps, 1 from
    ``curriculum_end`` on, interpolated between; setting both breakpoints to
    ``total_steps`` keeps the whole run at alpha 0. Evaluation fires every
    ``eval_every`` steps on a second connection with deterministic actions and
    fixed seeds, so the learning curve measures policy movement rather than
    episode luck.
    """

    host: str = "127.0.0.1"
    port: int = 7755
    total_steps: int = 20_000
    warmup_steps: int = 500
    replay_capacity: int = 100_000
    batch_size: int = 256
    hidden: tuple[int, ...] = (256, 256)
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 5e-3
    action_scale: float = 5.0
    entropy_target: float = -3.0
    curriculum_start: int = 0
    curriculum_end: int = 0
    updates_per_step: int = 1
    eval_every: int = 1_000
    eval_episodes: int = 5
    seed: int = 1
    export_path: str = "policy.json"
    curve_path: str = "curve.csv"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.total_steps < 1:
            raise TrainConfigError("total_steps must be at least 1")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise TrainConfigError("warmup_steps must lie within total_steps")
        if self.batch_size < 1:
            raise TrainConfigError("batch_size must be at least 1")
        if self.replay_capacity < self.batch_size:
            raise TrainConfigError("replay_capacity must hold at least one batch")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise TrainConfigError("hidden layer widths must be positive")
        if self.lr <= 0:
            raise TrainConfigError("lr must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise TrainConfigError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise TrainConfigError("tau must be in (0, 1]")
        if self.action_scale <= 0:
            raise TrainConfigError("action_scale must be positive")
        if not 0 <= self.curriculum_start <= self.curriculum_end <= self.total_steps:
            raise TrainConfigError(
                "curriculum breakpoints must satisfy "
                "0 <= start <= end <= total_steps"
            )
        if self.updates_per_step < 0:
            raise TrainConfigError("updates_per_step must be non-negative")
        if self.eval_every < 1:
            raise TrainConfigError("eval_every must be at least 1")
        if self.warmup_steps >= self.eval_every:
            # Evaluation needs a built policy; warmup runs before one exists.
            raise TrainConfigError("eval_every must exceed warmup_steps")
        if self.eval_episodes < 1:
            raise TrainConfigError("eval_episodes must be at least 1")


def load_config(path: str | Path) -> TrainConfig:
    """Parse a JSON config file, rejecting keys the schema does not define."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise TrainConfigError("config root must be a JSON object")
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise TrainConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return TrainConfig(**doc)
    except TypeError as e:
        raise TrainConfigError(str(e)) from e
