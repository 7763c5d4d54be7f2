"""Constrained action selection around a portable neural policy.

The gate estimates, from the trailing window of cat position fixes, the
probability that the pursuer is near (< d_near), mid-range, or far (> d_far)
from the mouse. Each per-fix probability is a 3-D noncentral chi-squared CDF
evaluated in closed form; the per-fix triples are blended with convex recency
weights. The sampled scenario then selects among: the neural policy's action
(near), holding position (mid), or returning to the origin (far).

The neural policy itself is a plain MLP with a gaussian head and tanh
squashing, loaded from a versioned JSON weight file (see README for the exact
format) so it can be produced by an out-of-process trainer.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

WEIGHT_FORMAT_VERSION = 1

# default action bound [km per axis per decision step]
DEFAULT_ACTION_SCALE = 5.0


def gaussian_q(x: float) -> float:
    """Upper-tail probability of the standard normal."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def chi2_noncentral_cdf(c: float, x: np.ndarray, sigma: float) -> float:
    """P(‖v‖ < c) for v ~ N(x, sigma^2 I_3) — 3-DOF noncentral chi-squared CDF.

    Closed form in the normalized variables chat = (c/sigma)^2 and
    lam = sum_j (x_j/sigma)^2:

        P = 1 - [Q(sqrt(chat)-sqrt(lam)) + Q(sqrt(chat)+sqrt(lam))
                 + sqrt(2/pi) * sinh(sqrt(lam*chat))/sqrt(lam)
                   * exp(-(chat+lam)/2)]

    The sinh term is evaluated as a difference of exponentials with
    non-positive exponents (never overflows); for tiny lam*chat it switches to
    the series sinh(u)/u = 1 + u^2/6 + u^4/120.
    """
    if sigma <= 0 or not np.isfinite(sigma):
        raise ValueError(f"sigma must be positive, got {sigma}")
    if c < 0 or not np.isfinite(c):
        raise ValueError(f"threshold c must be non-negative, got {c}")
    if c == 0.0:
        return 0.0
    x = np.asarray(x, dtype=float).reshape(3)
    chat = (c / sigma) ** 2
    lam = float(np.sum((x / sigma) ** 2))
    rc, rl = math.sqrt(chat), math.sqrt(lam)
    u = rc * rl  # sqrt(lam * chat)
    if u < 1e-3:
        sinh_term = (
            math.sqrt(2.0 / math.pi)
            * rc
            * (1.0 + u * u / 6.0 + u**4 / 120.0)
            * math.exp(-(chat + lam) / 2.0)
        )
    else:
        # sinh(u) e^{-(chat+lam)/2} = (e^{-(rc-rl)^2/2} - e^{-(rc+rl)^2/2}) / 2
        sinh_term = (
            math.sqrt(2.0 / math.pi)
            / (2.0 * rl)
            * (math.exp(-0.5 * (rc - rl) ** 2) - math.exp(-0.5 * (rc + rl) ** 2))
        )
    p = 1.0 - (gaussian_q(rc - rl) + gaussian_q(rc + rl) + sinh_term)
    return float(min(1.0, max(0.0, p)))


class ScenarioProbabilities(NamedTuple):
    near: float
    mid: float
    far: float


def exponential_weights(n: int, decay: float = 0.7) -> np.ndarray:
    """Convex recency weights for an oldest→newest window; newest heaviest."""
    if n <= 0:
        raise ValueError("window must be non-empty")
    if not 0 < decay <= 1:
        raise ValueError("decay must be in (0, 1]")
    w = decay ** np.arange(n - 1, -1, -1, dtype=float)
    return w / w.sum()


def scenario_probs(
    history: Sequence[np.ndarray],
    mouse: np.ndarray,
    d_near: float,
    d_far: float,
    weights: np.ndarray,
    sigma_floor: float = 1e-6,
) -> ScenarioProbabilities:
    """Blend per-fix near/mid/far probabilities over the estimate window.

    ``history`` is the trailing window of cat position fixes (Hill km,
    oldest→newest; CatEstimate objects or raw 3-vectors). The shared scalar
    sigma is the mean of the per-axis standard deviations of the fix-to-mouse
    offsets over the window, floored at ``sigma_floor`` so a perfectly static
    window (e.g. zero-noise curriculum) degenerates to indicator probabilities
    instead of dividing by zero.
    """
    if len(history) == 0:
        raise ValueError("empty estimate history")
    if not 0 < d_near < d_far:
        raise ValueError("need 0 < d_near < d_far")
    offsets = np.stack(
        [np.asarray(getattr(h, "z", h), dtype=float).reshape(3) for h in history]
    ) - np.asarray(mouse, dtype=float).reshape(3)
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(history),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a convex combination over the window")
    sigma = max(float(np.mean(offsets.std(axis=0))), sigma_floor)
    near = mid = 0.0
    for wj, xj in zip(w, offsets):
        p_near = chi2_noncentral_cdf(d_near, xj, sigma)
        p_far_cdf = chi2_noncentral_cdf(d_far, xj, sigma)
        near += wj * p_near
        mid += wj * max(0.0, p_far_cdf - p_near)
    # far is the residual so the triple sums to exactly 1.0; the branches
    # only absorb sub-ulp spill from the weighted accumulation
    far = 1.0 - (near + mid)
    if far < 0.0:
        far = 0.0
        mid = 1.0 - near
        if mid < 0.0:
            mid, near = 0.0, 1.0
    return ScenarioProbabilities(near=near, mid=mid, far=far)


@dataclass(frozen=True)
class GateConfig:
    """Scenario-gate knobs: thresholds [km], window depth, recency decay."""

    d_near: float = 20.0
    d_far: float = 35.0
    history_n: int = 10
    decay: float = 0.7
    sigma_floor: float = 1e-6

    def window_weights(self) -> np.ndarray:
        return exponential_weights(self.history_n, self.decay)


@dataclass
class Observation:
    """Policy input: own state, current absolute goal, estimate window.

    The flattened layout is [mouse pos (3), mouse vel (3), goal (3),
    history N*3 oldest→newest] — length 9 + 3N. Staleness flags ride along as
    metadata and are not part of the vector.
    """

    mouse_pos: np.ndarray
    mouse_vel: np.ndarray
    goal: np.ndarray
    history: np.ndarray  # (N, 3) Hill km, oldest -> newest
    stale: np.ndarray = field(default=None)  # (N,) bool

    def __post_init__(self):
        self.mouse_pos = np.asarray(self.mouse_pos, dtype=float).reshape(3)
        self.mouse_vel = np.asarray(self.mouse_vel, dtype=float).reshape(3)
        self.goal = np.asarray(self.goal, dtype=float).reshape(3)
        self.history = np.asarray(self.history, dtype=float)
        if self.history.ndim != 2 or self.history.shape[1] != 3:
            raise ValueError("history must be (N, 3)")
        if self.stale is None:
            self.stale = np.zeros(self.history.shape[0], dtype=bool)
        else:
            self.stale = np.asarray(self.stale, dtype=bool).reshape(self.history.shape[0])

    @property
    def n_history(self) -> int:
        return self.history.shape[0]

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [self.mouse_pos, self.mouse_vel, self.goal, self.history.reshape(-1)]
        )


class WeightFormatError(ValueError):
    pass


@dataclass
class PolicyWeights:
    """MLP actor parameters plus the metadata needed to run it standalone."""

    arch: list[int]
    weights: list[np.ndarray]  # layer k: (arch[k+1], arch[k])
    biases: list[np.ndarray]
    action_scale: float
    obs_mean: np.ndarray
    obs_std: np.ndarray
    history_n: int
    version: int = WEIGHT_FORMAT_VERSION

    def __post_init__(self):
        self.arch = [int(d) for d in self.arch]
        if len(self.arch) < 2:
            raise WeightFormatError("arch needs at least input and output dims")
        if self.arch[-1] != 6:
            raise WeightFormatError("output layer must emit 3 means + 3 log-stds")
        if len(self.weights) != len(self.arch) - 1 or len(self.biases) != len(self.arch) - 1:
            raise WeightFormatError("weights/biases count must match arch")
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.arch[k + 1], self.arch[k]):
                raise WeightFormatError(
                    f"layer {k}: expected {(self.arch[k + 1], self.arch[k])}, got {W.shape}"
                )
            if b.shape != (self.arch[k + 1],):
                raise WeightFormatError(f"layer {k}: bias shape {b.shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise WeightFormatError(f"layer {k}: non-finite parameters")
        self.obs_mean = np.asarray(self.obs_mean, dtype=float).reshape(self.arch[0])
        self.obs_std = np.asarray(self.obs_std, dtype=float).reshape(self.arch[0])
        if np.any(self.obs_std <= 0) or not np.all(np.isfinite(self.obs_std)):
            raise WeightFormatError("obs_std must be positive and finite")
        if not np.all(np.isfinite(self.obs_mean)):
            raise WeightFormatError("obs_mean must be finite")
        if self.action_scale <= 0 or not np.isfinite(self.action_scale):
            raise WeightFormatError("action_scale must be positive")
        if 9 + 3 * int(self.history_n) != self.arch[0]:
            raise WeightFormatError(
                f"history_n {self.history_n} inconsistent with input dim {self.arch[0]}"
            )

    @property
    def obs_dim(self) -> int:
        return self.arch[0]

    @classmethod
    def zeros(cls, history_n: int = 10, hidden: Sequence[int] = (256, 256)) -> "PolicyWeights":
        """All-zero parameters (squashed mean action is exactly 0)."""
        arch = [9 + 3 * history_n, *hidden, 6]
        return cls(
            arch=arch,
            weights=[np.zeros((arch[k + 1], arch[k])) for k in range(len(arch) - 1)],
            biases=[np.zeros(arch[k + 1]) for k in range(len(arch) - 1)],
            action_scale=DEFAULT_ACTION_SCALE,
            obs_mean=np.zeros(arch[0]),
            obs_std=np.ones(arch[0]),
            history_n=history_n,
        )


def save_weights(w: PolicyWeights, path: str | os.PathLike) -> None:
    doc = {
        "version": w.version,
        "arch": list(w.arch),
        "weights": [W.tolist() for W in w.weights],
        "biases": [b.tolist() for b in w.biases],
        "action_scale": w.action_scale,
        "obs_norm": {"mean": w.obs_mean.tolist(), "std": w.obs_std.tolist()},
        "history_n": int(w.history_n),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_weights(path: str | os.PathLike) -> PolicyWeights:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise WeightFormatError(f"not a weight file: {e}") from e
    if not isinstance(doc, dict):
        raise WeightFormatError("weight file must hold a single object")
    version = doc.get("version")
    if version != WEIGHT_FORMAT_VERSION:
        raise WeightFormatError(f"unsupported weight format version {version!r}")
    try:
        return PolicyWeights(
            arch=doc["arch"],
            weights=[np.asarray(W, dtype=float) for W in doc["weights"]],
            biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
            action_scale=float(doc["action_scale"]),
            obs_mean=np.asarray(doc["obs_norm"]["mean"], dtype=float),
            obs_std=np.asarray(doc["obs_norm"]["std"], dtype=float),
            history_n=int(doc["history_n"]),
            version=version,
        )
    except WeightFormatError:
        raise
    except KeyError as e:
        raise WeightFormatError(f"missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise WeightFormatError(f"malformed weight file: {e}") from e


def policy_forward(
    obs: Observation | np.ndarray,
    weights: PolicyWeights,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
) -> np.ndarray:
    """Actor forward pass: normalized obs -> ReLU MLP -> gaussian head -> tanh.

    Stochastic mode draws pre-squash actions from N(mean, exp(log_std)^2);
    deterministic mode squashes the mean. Output is km per axis, bounded by
    ``action_scale``.
    """
    x = obs.vector() if isinstance(obs, Observation) else np.asarray(obs, dtype=float)
    if x.shape != (weights.obs_dim,):
        raise WeightFormatError(
            f"observation length {x.shape} does not match input dim {weights.obs_dim}"
        )
    h = (x - weights.obs_mean) / weights.obs_std
    for W, b in zip(weights.weights[:-1], weights.biases[:-1]):
        h = np.maximum(W @ h + b, 0.0)
    out = weights.weights[-1] @ h + weights.biases[-1]
    mean, log_std = out[:3], np.clip(out[3:], LOG_STD_MIN, LOG_STD_MAX)
    if deterministic:
        pre = mean
    else:
        if rng is None:
            raise ValueError("stochastic forward needs an rng")
        pre = mean + np.exp(log_std) * rng.standard_normal(3)
    return np.tanh(pre) * weights.action_scale


def constrained_select(
    obs: Observation,
    probs: ScenarioProbabilities,
    weights: PolicyWeights,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> np.ndarray:
    """Sample a scenario and emit the corresponding goal change (km).

    near -> the neural policy's action; mid -> hold (exact zero);
    far -> return to origin (-mouse position).
    """
    p = np.array(probs, dtype=float)
    total = p.sum()
    if total <= 0 or np.any(p < 0):
        raise ValueError(f"invalid scenario probabilities {probs}")
    branch = rng.choice(3, p=p / total)
    if branch == 0:
        return policy_forward(obs, weights, rng, deterministic=deterministic)
    if branch == 1:
        return np.zeros(3)
    return -obs.mouse_pos.copy()
