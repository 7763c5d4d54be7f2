"""Config schema: validation, defaults, and the builders behind `run`."""

import json

import numpy as np
import pytest

from evasim.config import (
    ConfigError,
    ExperimentConfig,
    build_controllers,
    load_config,
    to_episode_config,
    validate_config,
)
from evasim.harness import DvoController, GrsController, RlController
from evasim.policy import PolicyWeights, save_weights

MINIMAL = {"controllers": ["grs", "dvo"]}


def test_minimal_document_fills_defaults():
    cfg = validate_config(MINIMAL)
    assert cfg.runs == 100
    assert cfg.seeds == [1, 2, 3]
    assert cfg.weights is None
    assert cfg.deterministic is True
    assert cfg.episode.dt == 120.0
    assert cfg.episode.constellation.size == 60
    assert cfg.episode.mpc.horizon == 8
    assert cfg.gate.d_near == 20.0
    assert cfg.grs.amortize_steps == 150
    assert cfg.grs.replan == 10
    assert cfg.grs.replan_shift == 1.0
    assert cfg.dvo.trigger == 35.0


def test_controllers_required_and_checked():
    with pytest.raises(ConfigError):
        validate_config({})
    with pytest.raises(ConfigError):
        validate_config({"controllers": []})
    with pytest.raises(ConfigError):
        validate_config({"controllers": ["sac"]})


@pytest.mark.parametrize(
    "doc",
    [
        {"controllers": ["grs"], "extra_key": 1},
        {"controllers": ["grs"], "episode": {"dt_s": 60.0}},
        {"controllers": ["grs"], "episode": {"spawn": {"radius": 5.0}}},
        {"controllers": ["grs"], "episode": {"constellation": {"count": 30}}},
        {"controllers": ["grs"], "episode": {"mpc": {"iters": 10}}},
        {"controllers": ["grs"], "gate": {"near": 10.0}},
        {"controllers": ["grs"], "grs": {"levels": 2}},
        {"controllers": ["grs"], "dvo": {"d_protect": 5.0}},
    ],
)
def test_unknown_keys_rejected_at_every_level(doc):
    with pytest.raises(ConfigError):
        validate_config(doc)


def test_scalar_bounds_enforced():
    for patch in (
        {"runs": 0},
        {"seeds": []},
        {"episode": {"alpha": 1.5}},
        {"episode": {"history_n": 0}},
        {"episode": {"mpc": {"horizon": 0}}},
        {"grs": {"amortize_steps": 0}},
        {"dvo": {"angle_tol": -0.1}},
    ):
        with pytest.raises(ConfigError):
            validate_config({**MINIMAL, **patch})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(bad)


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "exp.json"
    doc = {
        "controllers": ["dvo"],
        "runs": 5,
        "seeds": [7],
        "episode": {"max_steps": 50, "alpha": 0.5, "spawn": {"speed": 2.0e-3}},
        "dvo": {"trigger": 40.0, "protect": 15.0},
    }
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    assert cfg.runs == 5
    assert cfg.episode.max_steps == 50
    assert cfg.episode.spawn.speed == 2.0e-3
    assert cfg.episode.spawn.min_start_distance == 25.0  # untouched default
    assert cfg.dvo.protect == 15.0


def test_to_episode_config_propagates_sections():
    cfg = validate_config(
        {
            "controllers": ["grs"],
            "episode": {
                "dt": 60.0,
                "thrust_limit": 2.0,
                "mpc": {"horizon": 5, "max_iter": 77},
                "constellation": {"size": 30, "planes": 3},
            },
        }
    )
    ep = to_episode_config(cfg)
    assert ep.dt == 60.0
    assert ep.mpc.dt == 60.0  # mpc steps at the episode cadence
    assert ep.mpc.horizon == 5
    assert ep.mpc.max_iter == 77
    assert ep.mpc.u_lb == -2.0 and ep.mpc.u_ub == 2.0
    assert ep.constellation.size == 30
    assert ep.spawn.time_range == (21600.0, 36000.0)


def test_to_episode_config_default_matches_runtime_defaults():
    ep = to_episode_config(validate_config(MINIMAL))
    from evasim.env import EpisodeConfig

    ref = EpisodeConfig()
    assert ep.w_fuel == ref.w_fuel
    assert ep.d_tol == ref.d_tol
    assert ep.spawn == ref.spawn


def test_build_controllers_order_and_settings():
    cfg = validate_config(
        {
            "controllers": ["dvo", "grs"],
            "grs": {"window": 4, "amortize_steps": 90, "replan": 5, "replan_shift": 0.5},
            "dvo": {"trigger": 42.0, "t_fix": 1000.0},
        }
    )
    dvo, grs = build_controllers(cfg)
    assert isinstance(dvo, DvoController) and dvo.trigger == 42.0
    assert dvo.t_fix == 1000.0
    assert isinstance(grs, GrsController) and grs.window_n == 4
    assert grs.amortize_steps == 90
    assert grs.replan == 5
    assert grs.replan_shift == 0.5


def test_build_controllers_rl_needs_weights(tmp_path):
    cfg = validate_config({"controllers": ["rl"]})
    with pytest.raises(ConfigError, match="weights"):
        build_controllers(cfg)

    wpath = tmp_path / "w.json"
    save_weights(PolicyWeights.zeros(), wpath)
    cfg2 = validate_config(
        {
            "controllers": ["rl"],
            "weights": str(wpath),
            "deterministic": False,
            "gate": {"d_near": 12.0, "decay": 0.5},
        }
    )
    (rl,) = build_controllers(cfg2)
    assert isinstance(rl, RlController)
    assert rl.deterministic is False
    assert rl.gate.d_near == 12.0
    assert rl.gate.decay == 0.5
    assert rl.gate.history_n == cfg2.episode.history_n
    assert np.all(rl.weights.biases[-1] == 0.0)


def test_experiment_config_is_a_strict_model():
    cfg = validate_config(MINIMAL)
    assert isinstance(cfg, ExperimentConfig)
    with pytest.raises(Exception):
        ExperimentConfig.model_validate({"controllers": ["grs"], "nope": True})
