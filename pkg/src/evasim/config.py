"""Experiment configuration: one JSON document drives a whole run.

The schema mirrors the runtime dataclasses section by section; every model
rejects unknown keys so a typo fails loudly at load time instead of silently
running defaults. Builders at the bottom translate validated sections into
the actual episode/controller objects.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .env import EpisodeConfig, SpawnBounds
from .guidance import MpcConfig
from .harness import Controller, make_controller
from .policy import GateConfig, load_weights
from .rfsense import DEFAULT_BEAM_HALF_ANGLE, DEFAULT_SIGMA_D, ConstellationConfig


class ConfigError(ValueError):
    """Raised when a config file does not satisfy the schema."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpawnSection(_Section):
    approach_radius: float = 8.0
    speed: float = 1.0e-3
    time_range: tuple[float, float] = (21600.0, 36000.0)
    min_start_distance: float = 25.0


class ConstellationSection(_Section):
    size: int = 60
    planes: int = 6
    altitude_km: float = 550.0
    inclination: float = math.pi / 2.0
    phasing: int = 1


class MpcSection(_Section):
    horizon: int = Field(default=8, ge=1)
    max_iter: int = Field(default=200, ge=1)
    tol: float = Field(default=1.0e-8, gt=0)


class EpisodeSection(_Section):
    dt: float = 120.0
    max_steps: int = 2000
    d_tol: float = 20.0
    deviation_cutoff: float = 50.0
    w_dev: float = 1.0 / 50.0
    w_fuel: float | None = None
    alpha: float = Field(default=1.0, ge=0.0, le=1.0)
    history_n: int = Field(default=10, ge=1)
    cat_source: str = "synthetic"
    beam_half_angle: float = DEFAULT_BEAM_HALF_ANGLE
    sigma_d: float = DEFAULT_SIGMA_D
    mass: float = 2500.0
    thrust_limit: float = 1.0
    spawn: SpawnSection = SpawnSection()
    constellation: ConstellationSection = ConstellationSection()
    mpc: MpcSection = MpcSection()


class GateSection(_Section):
    d_near: float = 20.0
    d_far: float = 35.0
    decay: float = 0.7
    sigma_floor: float = 1.0e-6


class GrsSection(_Section):
    window: int = Field(default=10, ge=1)
    amortize_steps: int = Field(default=150, ge=1)
    replan: int = Field(default=10, ge=1)
    replan_shift: float = Field(default=1.0, gt=0.0)


class DvoSection(_Section):
    trigger: float = 35.0
    protect: float | None = None
    t_fix: float | None = None
    angle_tol: float = Field(default=0.0, ge=0.0)
    window: int = Field(default=10, ge=1)


class ExperimentConfig(_Section):
    """Everything `run` needs; see the module docstring for the layout."""

    controllers: list[Literal["rl", "grs", "dvo"]] = Field(min_length=1)
    runs: int = Field(default=100, ge=1)
    seeds: list[int] = Field(default=[1, 2, 3], min_length=1)
    weights: str | None = None
    deterministic: bool = True
    episode: EpisodeSection = EpisodeSection()
    gate: GateSection = GateSection()
    grs: GrsSection = GrsSection()
    dvo: DvoSection = DvoSection()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return validate_config(doc)


def validate_config(doc) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def to_episode_config(cfg: ExperimentConfig) -> EpisodeConfig:
    ep = cfg.episode
    return EpisodeConfig(
        dt=ep.dt,
        max_steps=ep.max_steps,
        d_tol=ep.d_tol,
        deviation_cutoff=ep.deviation_cutoff,
        w_dev=ep.w_dev,
        w_fuel=ep.w_fuel,
        alpha=ep.alpha,
        history_n=ep.history_n,
        cat_source=ep.cat_source,
        spawn=SpawnBounds(
            approach_radius=ep.spawn.approach_radius,
            speed=ep.spawn.speed,
            time_range=tuple(ep.spawn.time_range),
            min_start_distance=ep.spawn.min_start_distance,
        ),
        constellation=ConstellationConfig(
            size=ep.constellation.size,
            planes=ep.constellation.planes,
            altitude_km=ep.constellation.altitude_km,
            inclination=ep.constellation.inclination,
            phasing=ep.constellation.phasing,
        ),
        beam_half_angle=ep.beam_half_angle,
        sigma_d=ep.sigma_d,
        mass=ep.mass,
        thrust_limit=ep.thrust_limit,
        mpc=MpcConfig(
            horizon=ep.mpc.horizon,
            dt=ep.dt,
            u_lb=-ep.thrust_limit,
            u_ub=ep.thrust_limit,
            max_iter=ep.mpc.max_iter,
            tol=ep.mpc.tol,
        ),
    )


def build_controllers(cfg: ExperimentConfig) -> list[Controller]:
    out = []
    for name in cfg.controllers:
        if name == "rl":
            if cfg.weights is None:
                raise ConfigError("controller 'rl' needs a 'weights' file path")
            gate = GateConfig(
                d_near=cfg.gate.d_near,
                d_far=cfg.gate.d_far,
                history_n=cfg.episode.history_n,
                decay=cfg.gate.decay,
                sigma_floor=cfg.gate.sigma_floor,
            )
            out.append(
                make_controller(
                    "rl",
                    weights=load_weights(cfg.weights),
                    gate=gate,
                    deterministic=cfg.deterministic,
                )
            )
        elif name == "grs":
            out.append(
                make_controller(
                    "grs",
                    window=cfg.grs.window,
                    amortize_steps=cfg.grs.amortize_steps,
                    replan=cfg.grs.replan,
                    replan_shift=cfg.grs.replan_shift,
                )
            )
        else:
            out.append(
                make_controller(
                    "dvo",
                    trigger=cfg.dvo.trigger,
                    protect=cfg.dvo.protect,
                    t_fix=cfg.dvo.t_fix,
                    angle_tol=cfg.dvo.angle_tol,
                    window=cfg.dvo.window,
                )
            )
    return out
