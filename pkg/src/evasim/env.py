"""Episode orchestration for the pursuit-evasion game.

One episode: an uncontrolled drifting pursuer (the cat), an MPC-actuated
evader (the mouse) riding the origin of a rotating Hill frame on a circular
reference orbit, and a receiver constellation producing noisy position fixes
of the cat each step. Rewards favor staying near the origin while spending
little fuel, and zero out whenever the cat gets inside the tolerance radius.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import A_GEO
from .dynamics import (
    CraftParams,
    HillState,
    ThrustCommand,
    advance_elements,
    cw_step,
    discrete_matrices,
    mean_motion,
)
from .frames import OrbitalElements, ecef_to_hill, hill_to_ecef
from .guidance import GoalCommand, MpcConfig, mpc_solve
from .policy import Observation
from .rfsense import (
    DEFAULT_BEAM_HALF_ANGLE,
    DEFAULT_SIGMA_D,
    BeamSpec,
    CatEstimate,
    ConstellationConfig,
    SensorArray,
    build_walker,
    crlb,
    sample_estimate,
    visible_sensors,
)

SCENARIO_HEADER = ["t_s", "x_km", "y_km", "z_km"]


class EpisodeProtocolError(RuntimeError):
    """Raised when the step/reset contract is violated (e.g. step after done)."""


@dataclass(frozen=True)
class SpawnBounds:
    """Sampler bounds for synthetic drift paths.

    A close approach is drawn first — offset within ``approach_radius`` km of
    the origin, relative speed up to ``speed`` km/s, at a time inside
    ``time_range`` — and the state is propagated backward so the episode opens
    with the threat still inbound, at least ``min_start_distance`` km out.
    """

    approach_radius: float = 8.0
    speed: float = 1.0e-3
    time_range: tuple[float, float] = (21600.0, 36000.0)
    min_start_distance: float = 25.0

    def __post_init__(self):
        if self.approach_radius <= 0 or self.speed < 0:
            raise ValueError("approach radius must be positive and speed non-negative")
        t0, t1 = self.time_range
        if not (0 < t0 <= t1):
            raise ValueError("time range must be ordered and positive")
        if self.min_start_distance < 0:
            raise ValueError("min start distance must be non-negative")


def spawn_cat_drift(rng: np.random.Generator, bounds: SpawnBounds, n: float) -> HillState:
    """Random drifting pursuer whose free coast threatens the origin.

    Deterministic given the generator state; 100 draws give 100 distinct
    trajectories. Draws are rejected (up to a cap) until the t=0 position
    clears the minimum start distance, so episodes open with a genuine
    approach rather than a pursuer already on top of the origin.
    """
    state = None
    for _ in range(200):
        t_a = rng.uniform(*bounds.time_range)
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        offset = u * rng.uniform(0.0, bounds.approach_radius)
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        vel = v * rng.uniform(0.3, 1.0) * bounds.speed
        approach = np.concatenate([offset, vel])
        A, _ = discrete_matrices(n, t_a, 1.0)
        state = HillState.from_vector(np.linalg.solve(A, approach))
        if np.linalg.norm(state.pos) >= bounds.min_start_distance:
            return state
    return state


def validate_schedule(schedule) -> list[tuple[float, float]]:
    pts = [(float(s), float(a)) for s, a in schedule]
    if not pts:
        raise ValueError("schedule must have at least one breakpoint")
    for (s0, a0), (s1, a1) in zip(pts, pts[1:]):
        if s1 <= s0:
            raise ValueError("breakpoint steps must be strictly increasing")
        if a1 < a0:
            raise ValueError("alpha must be non-decreasing across breakpoints")
    if any(not 0.0 <= a <= 1.0 for _, a in pts):
        raise ValueError("alpha values must lie in [0, 1]")
    return pts


def curriculum_alpha(train_step: float, schedule) -> float:
    """Noise-scale schedule: 0 before the first breakpoint, linear between
    breakpoints, the final value afterwards."""
    pts = validate_schedule(schedule)
    if train_step < pts[0][0]:
        return 0.0
    if train_step >= pts[-1][0]:
        return pts[-1][1]
    xs = [s for s, _ in pts]
    ys = [a for _, a in pts]
    return float(np.interp(train_step, xs, ys))


def _default_reference() -> OrbitalElements:
    return OrbitalElements(0.0, 0.0, 0.0, A_GEO, 0.0)


@dataclass
class EpisodeConfig:
    """Everything one episode needs; field names double as config-file keys."""

    dt: float = 120.0
    max_steps: int = 2000
    d_tol: float = 20.0
    deviation_cutoff: float = 50.0
    w_dev: float = 1.0 / 50.0
    w_fuel: float | None = None  # default below: a max-thrust step costs 0.2
    alpha: float = 1.0
    history_n: int = 10
    seed: int | None = None
    cat_source: str = "synthetic"
    spawn: SpawnBounds = field(default_factory=SpawnBounds)
    constellation: ConstellationConfig = field(default_factory=ConstellationConfig)
    beam_half_angle: float = DEFAULT_BEAM_HALF_ANGLE
    sigma_d: float = DEFAULT_SIGMA_D
    mass: float = 2500.0
    thrust_limit: float = 1.0
    reference: OrbitalElements = field(default_factory=_default_reference)
    mpc: MpcConfig | None = None
    curriculum: tuple | None = None

    def __post_init__(self):
        if self.dt <= 0 or self.max_steps < 1:
            raise ValueError("dt must be positive and max_steps at least 1")
        if self.d_tol <= 0:
            raise ValueError("d_tol must be positive")
        if self.deviation_cutoff <= self.d_tol:
            raise ValueError("deviation cutoff must exceed d_tol")
        if self.w_dev < 0:
            raise ValueError("w_dev must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.history_n < 1:
            raise ValueError("history_n must be at least 1")
        if self.mass <= 0 or self.thrust_limit <= 0:
            raise ValueError("mass and thrust limit must be positive")
        if self.w_fuel is None:
            self.w_fuel = 0.2 / (3.0 * self.thrust_limit * self.dt)
        if self.w_fuel < 0:
            raise ValueError("w_fuel must be non-negative")
        if self.mpc is None:
            self.mpc = MpcConfig(dt=self.dt, u_lb=-self.thrust_limit, u_ub=self.thrust_limit)
        elif self.mpc.dt != self.dt:
            raise ValueError("MPC step length must match the episode dt")
        if self.curriculum is not None:
            validate_schedule(self.curriculum)


@dataclass
class EpisodeRecord:
    step: int
    t: float
    mouse_pos: np.ndarray
    mouse_vel: np.ndarray
    cat_true: np.ndarray
    cat_est: np.ndarray
    cat_filtered: np.ndarray
    action: np.ndarray
    thrust: np.ndarray
    fuel_step: float
    reward: float
    probs: np.ndarray
    alpha: float
    stale: bool
    n_visible: int
    cat_dist: float
    deviation: float
    within_d_tol: bool


_CSV_COLUMNS = (
    ["step", "t_s"]
    + [f"mouse_{c}" for c in ("x", "y", "z", "vx", "vy", "vz")]
    + [f"cat_{c}" for c in ("x", "y", "z")]
    + [f"est_{c}" for c in ("x", "y", "z")]
    + [f"filt_{c}" for c in ("x", "y", "z")]
    + [f"action_{c}" for c in ("x", "y", "z")]
    + [f"thrust_{c}" for c in ("x", "y", "z")]
    + ["fuel_step", "reward", "p_near", "p_mid", "p_far", "alpha", "stale", "n_visible"]
    + ["cat_dist", "deviation", "within_d_tol"]
)


class EpisodeLog:
    """Per-step records plus recomputable episode aggregates."""

    def __init__(self):
        self.records: list[EpisodeRecord] = []

    def append(self, rec: EpisodeRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def annotate_last(self, filtered=None, probs=None):
        """Attach controller-side extras to the most recent record."""
        if not self.records:
            raise ValueError("no record to annotate")
        rec = self.records[-1]
        if filtered is not None:
            rec.cat_filtered = np.asarray(filtered, dtype=float).reshape(3)
        if probs is not None:
            rec.probs = np.asarray(probs, dtype=float).reshape(3)

    def rows(self):
        for r in self.records:
            yield (
                [r.step, repr(r.t)]
                + [repr(float(v)) for v in r.mouse_pos]
                + [repr(float(v)) for v in r.mouse_vel]
                + [repr(float(v)) for v in r.cat_true]
                + [repr(float(v)) for v in r.cat_est]
                + [repr(float(v)) for v in r.cat_filtered]
                + [repr(float(v)) for v in r.action]
                + [repr(float(v)) for v in r.thrust]
                + [repr(r.fuel_step), repr(r.reward)]
                + [repr(float(v)) for v in r.probs]
                + [repr(r.alpha), int(r.stale), r.n_visible]
                + [repr(r.cat_dist), repr(r.deviation), int(r.within_d_tol)]
            )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_CSV_COLUMNS)
            for row in self.rows():
                w.writerow(row)


def metrics(log: EpisodeLog) -> dict:
    """Aggregate an episode log; raises on an empty log."""
    if len(log) == 0:
        raise ValueError("cannot aggregate an empty log")
    recs = log.records
    return {
        "steps": len(recs),
        "total_reward": float(sum(r.reward for r in recs)),
        "steps_within_d_tol": int(sum(r.within_d_tol for r in recs)),
        "total_fuel": float(sum(r.fuel_step for r in recs)),
        "mean_deviation": float(np.mean([r.deviation for r in recs])),
    }


def load_scenario_track(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a scenario CSV (`t_s,x_km,y_km,z_km`) into (times, positions)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCENARIO_HEADER:
            raise ValueError(f"scenario header must be {SCENARIO_HEADER}, got {header}")
        data = np.array([[float(v) for v in row] for row in reader])
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != 4:
        raise ValueError("scenario file needs at least two t,x,y,z rows")
    return data[:, 0], data[:, 1:]


class Episode:
    """Single-threaded environment instance. Deterministic per (config, seed)."""

    def __init__(self, config: EpisodeConfig):
        self.config = config
        self.n = mean_motion(config.reference.semi_major_axis)
        self.sensors = SensorArray(build_walker(config.constellation))
        self.beam = BeamSpec(half_angle=config.beam_half_angle)
        self._track = None
        if config.cat_source != "synthetic":
            times, pos = load_scenario_track(config.cat_source)
            step = np.diff(times)
            if not np.allclose(step, config.dt, rtol=0, atol=1e-9):
                raise ValueError(
                    f"scenario cadence {step[0] if len(step) else '?'} s does not match dt="
                    f"{config.dt} s; resample the track first"
                )
            self._track = pos
        self._done = True
        self._rng = None
        self.log = EpisodeLog()

    # internal frame helper: reference elements advanced to sim time t
    def origin_at(self, t: float) -> OrbitalElements:
        return advance_elements(self.config.reference, t)

    @property
    def done(self) -> bool:
        return self._done

    @property
    def fuel_used(self) -> float:
        return self._craft.fuel_used

    @property
    def estimate(self) -> CatEstimate | None:
        """Latest position fix (possibly held from an earlier step)."""
        return self._estimate

    def _cat_state_at(self, step_index: int) -> HillState:
        if self._track is None:
            return self._cat
        pos = self._track[step_index]
        return HillState(pos, np.zeros(3))

    def _sense(self, t: float) -> tuple[CatEstimate, bool, int]:
        """One fix of the cat, or a held previous fix when geometry fails."""
        origin = self.origin_at(t)
        cat_ecef = hill_to_ecef(self._cat_hill_pos(), origin)
        positions = self.sensors.positions_at(t)
        vis = visible_sensors(cat_ecef, positions, self.beam)
        if len(vis) >= 4:
            bound = crlb(cat_ecef, positions[vis], self.config.sigma_d)
            if not bound.singular:
                est = sample_estimate(
                    cat_ecef, bound.cov, self._alpha, t, len(vis), self._rng
                )
                return est, False, len(vis)
        if self._estimate is None:
            # opening fix unavailable: report the sentinel-noise estimate so
            # downstream consumers start from an honest "unknown"
            cov = np.diag(np.full(3, 1.0e4**2))
            est = sample_estimate(cat_ecef, cov, self._alpha, t, len(vis), self._rng)
            return est, False, len(vis)
        return self._estimate, True, len(vis)

    def _cat_hill_pos(self) -> np.ndarray:
        return self._cat.pos if self._track is None else self._track[self._step]

    def _push_history(self, est: CatEstimate, stale: bool, t: float):
        hill = ecef_to_hill(est.z, self.origin_at(t if not stale else est.t))
        self._history = np.vstack([self._history[1:], hill[None, :]])
        self._stale_flags = np.concatenate([self._stale_flags[1:], [stale]])

    def _observation(self) -> Observation:
        return Observation(
            mouse_pos=self._mouse.pos.copy(),
            mouse_vel=self._mouse.vel.copy(),
            goal=self._goal.copy(),
            history=self._history.copy(),
            stale=self._stale_flags.copy(),
        )

    def reset(self, seed=None, alpha=None) -> Observation:
        cfg = self.config
        self._rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self._alpha = cfg.alpha if alpha is None else float(alpha)
        if not 0.0 <= self._alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        self._step = 0
        self._t = 0.0
        self._mouse = HillState.zero()
        self._craft = CraftParams(mass=cfg.mass, thrust_limit=cfg.thrust_limit)
        if self._track is None:
            self._cat = spawn_cat_drift(self._rng, cfg.spawn, self.n)
        else:
            self._cat = self._cat_state_at(0)
        self._goal = self._mouse.pos.copy()
        self._estimate = None
        est, stale, n_vis = self._sense(0.0)
        self._estimate = est
        first_hill = ecef_to_hill(est.z, self.origin_at(0.0))
        self._history = np.tile(first_hill, (cfg.history_n, 1))
        self._stale_flags = np.zeros(cfg.history_n, dtype=bool)
        self._done = False
        self.log = EpisodeLog()
        return self._observation()

    def _max_steps(self) -> int:
        if self._track is None:
            return self.config.max_steps
        return min(self.config.max_steps, len(self._track) - 1)

    def step(self, action) -> tuple[Observation, float, bool, dict]:
        if self._done:
            raise EpisodeProtocolError("episode is done; call reset() first")
        cfg = self.config
        action = np.asarray(action, dtype=float).reshape(3)
        if not np.all(np.isfinite(action)):
            raise ValueError("action must be finite")

        self._goal = self._mouse.pos + action
        result = mpc_solve(
            self._mouse, GoalCommand(target=self._goal), cfg.mpc, self.n, cfg.mass
        )
        fuel_step = self._craft.register_burn(result.command)
        self._mouse = cw_step(self._mouse, result.command, self.n, cfg.mass)
        if self._track is None:
            coast = ThrustCommand(np.zeros(3), cfg.dt)
            self._cat = cw_step(self._cat, coast, self.n, cfg.mass)
        self._step += 1
        self._t += cfg.dt
        if self._track is not None:
            self._cat = self._cat_state_at(self._step)

        est, stale, n_vis = self._sense(self._t)
        self._estimate = est
        self._push_history(est, stale, self._t)

        deviation = float(np.linalg.norm(self._mouse.pos))
        cat_dist = float(np.linalg.norm(self._cat_hill_pos() - self._mouse.pos))
        within = cat_dist <= cfg.d_tol
        if within:
            reward = 0.0
        else:
            reward = 1.0 - cfg.w_dev * deviation - cfg.w_fuel * fuel_step
            reward = float(np.clip(reward, 0.0, 1.0))

        hit_cutoff = deviation > cfg.deviation_cutoff
        exhausted = self._step >= self._max_steps()
        self._done = bool(hit_cutoff or exhausted)

        info = {
            "step": self._step,
            "t": self._t,
            "fuel_step": fuel_step,
            "fuel_total": self._craft.fuel_used,
            "deviation": deviation,
            "cat_dist_true": cat_dist,
            "stale": stale,
            "n_visible": n_vis,
            "estimate": est,
            "alpha": self._alpha,
            "mpc_converged": result.converged,
        }
        if self._done:
            info["done_reason"] = "deviation-cutoff" if hit_cutoff else "max-steps"

        self.log.append(
            EpisodeRecord(
                step=self._step,
                t=self._t,
                mouse_pos=self._mouse.pos.copy(),
                mouse_vel=self._mouse.vel.copy(),
                cat_true=self._cat_hill_pos().copy(),
                cat_est=self._history[-1].copy(),
                cat_filtered=np.full(3, np.nan),
                action=action.copy(),
                thrust=result.command.thrust.copy(),
                fuel_step=fuel_step,
                reward=reward,
                probs=np.full(3, np.nan),
                alpha=self._alpha,
                stale=stale,
                n_visible=n_vis,
                cat_dist=cat_dist,
                deviation=deviation,
                within_d_tol=within,
            )
        )
        return self._observation(), reward, self._done, info
