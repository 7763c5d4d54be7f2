"""Motion solvers for the evading craft.

Three layers live here:

* a box-constrained MPC turning absolute position goals into per-axis thrust,
  predicting with the same discrete CW matrices the simulator integrates, so
  model and plant are identical objects by construction;
* a single-burn evasive maneuver that sizes the minimum delta-v whose free
  drift clears a protected distance perpendicular to a chosen escape
  direction;
* a greedy recursive search over candidate goal positions on a sphere around
  the estimated pursuer position, scored with the deviation + fuel reward
  surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from .dynamics import HillState, ThrustCommand, discrete_matrices

GOAL_SOURCES = ("policy", "grs", "dvo", "return-to-origin")


@dataclass(frozen=True, eq=False)
class GoalCommand:
    """Absolute desired Hill position [km] plus a tag naming who asked."""

    target: np.ndarray
    source: str = "policy"

    def __post_init__(self):
        t = np.asarray(self.target, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("goal target must be finite")
        if self.source not in GOAL_SOURCES:
            raise ValueError(f"unknown goal source {self.source!r}")
        object.__setattr__(self, "target", t)


def _default_q() -> np.ndarray:
    # velocity is km/s while position is km, so damping the arrival takes a
    # large velocity weight; 1e6 settles a 10 km offset in ~60-80 steps of
    # 120 s with no overshoot out of the 1 km ball (scripts/calibrate_mpc.py)
    return np.diag([1.0, 1.0, 1.0, 1.0e6, 1.0e6, 1.0e6])


def _default_r() -> np.ndarray:
    return 1.0e-2 * np.eye(3)


@dataclass(eq=False)
class MpcConfig:
    """Receding-horizon tracker knobs.

    ``horizon`` steps of ``dt`` seconds each; Q weights the stacked
    position/velocity error (km, km/s), R the thrust effort (N); thrust is
    box-bounded per axis by [u_lb, u_ub] N.
    """

    horizon: int = 8
    dt: float = 120.0
    Q: np.ndarray = field(default_factory=_default_q)
    R: np.ndarray = field(default_factory=_default_r)
    u_lb: float = -1.0
    u_ub: float = 1.0
    max_iter: int = 200
    tol: float = 1.0e-8

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self.Q = np.asarray(self.Q, dtype=float).reshape(6, 6)
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        for name, Wmat in (("Q", self.Q), ("R", self.R)):
            if not np.allclose(Wmat, Wmat.T):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(Wmat)) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        if not self.u_lb < self.u_ub:
            raise ValueError("u_lb must be strictly below u_ub")


class MpcResult(NamedTuple):
    command: ThrustCommand
    converged: bool
    cost: float
    iterations: int


@lru_cache(maxsize=64)
def condensed_system(n: float, dt: float, m: float, horizon: int):
    """Stacked prediction matrices over the horizon.

    X = Sx x0 + Su U, with X the states 1..M stacked (6M), U the thrusts
    0..M-1 stacked (3M). Built on dynamics.discrete_matrices so the controller
    predicts with the very arrays the simulator steps with.
    """
    A, B = discrete_matrices(n, dt, m)
    Bu = B[:, 3:]
    powers = [np.eye(6)]
    for _ in range(horizon):
        powers.append(powers[-1] @ A)
    Sx = np.zeros((6 * horizon, 6))
    Su = np.zeros((6 * horizon, 3 * horizon))
    for i in range(1, horizon + 1):
        Sx[6 * (i - 1) : 6 * i] = powers[i]
        for j in range(i):
            Su[6 * (i - 1) : 6 * i, 3 * j : 3 * (j + 1)] = powers[i - 1 - j] @ Bu
    Sx.flags.writeable = False
    Su.flags.writeable = False
    return A, B, Sx, Su


def solve_box_qp(
    H: np.ndarray,
    q: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    max_iter: int = 200,
    tol: float = 1.0e-8,
    trace: list | None = None,
) -> tuple[np.ndarray, bool, int]:
    """Projected gradient on min 1/2 x'Hx + q'x subject to lb <= x <= ub.

    Fixed step 1/L (L the top eigenvalue of H) keeps every iterate feasible
    and the cost non-increasing. Returns (x, converged, iterations); when the
    iteration cap trips, x is the best (latest) feasible iterate.
    """
    H = 0.5 * (H + H.T)
    L = float(np.linalg.eigvalsh(H)[-1])
    x = np.clip(np.zeros_like(q), lb, ub)
    if trace is not None:
        trace.append(0.5 * x @ H @ x + q @ x)
    if L <= 0.0:
        # H vanishes: cost is linear; descend along -q to the box edge
        x = np.clip(np.where(q > 0, lb, np.where(q < 0, ub, x)), lb, ub)
        if trace is not None:
            trace.append(0.5 * x @ H @ x + q @ x)
        return x, True, 1
    step = 1.0 / L
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_new = np.clip(x - step * (H @ x + q), lb, ub)
        delta = np.max(np.abs(x_new - x))
        x = x_new
        if trace is not None:
            trace.append(0.5 * x @ H @ x + q @ x)
        if delta < tol:
            converged = True
            break
    return x, converged, it


def mpc_solve(s: HillState, goal: GoalCommand, cfg: MpcConfig, n: float, m: float) -> MpcResult:
    """One receding-horizon solve; only the first thrust is returned.

    Cost: sum_i e_i' Q e_i + u_i' R u_i over the horizon plus the terminal
    error term, with e measured against [goal, 0 velocity]. Non-convergence
    within the iteration cap returns the best feasible iterate with
    ``converged=False``.
    """
    _, _, Sx, Su = condensed_system(n, cfg.dt, m, cfg.horizon)
    x0 = s.vector
    xg = np.concatenate([goal.target, np.zeros(3)])
    Qbar = np.kron(np.eye(cfg.horizon), cfg.Q)
    Rbar = np.kron(np.eye(cfg.horizon), cfg.R)
    drift = Sx @ x0 - np.tile(xg, cfg.horizon)
    H = 2.0 * (Su.T @ Qbar @ Su + Rbar)
    q = 2.0 * (Su.T @ (Qbar @ drift))
    e0 = x0 - xg
    c0 = float(drift @ Qbar @ drift + e0 @ cfg.Q @ e0)
    lb = np.full(3 * cfg.horizon, cfg.u_lb)
    ub = np.full(3 * cfg.horizon, cfg.u_ub)
    U, converged, iters = solve_box_qp(H, q, lb, ub, cfg.max_iter, cfg.tol)
    cost = float(0.5 * U @ H @ U + q @ U + c0)
    return MpcResult(
        command=ThrustCommand(thrust=U[:3], dt=cfg.dt),
        converged=converged,
        cost=cost,
        iterations=iters,
    )


# --------------------------------------------------------------------------
# single-burn evasive maneuver


def drift_position_from_velocity(t: float, n: float) -> np.ndarray:
    """3x3 block mapping an impulsive velocity at the origin to the free-drift
    position t seconds later (the position-from-velocity block of the CW
    transition matrix)."""
    if t <= 0:
        raise ValueError("drift time must be positive")
    A, _ = discrete_matrices(n, t, 1.0)
    return A[:3, 3:]


def dvo_delta_v(
    direction_e: np.ndarray, D: float, t_fix: float, n: float
) -> tuple[float, np.ndarray]:
    """Minimum delta-v whose free drift reaches miss distance D at t_fix.

    The miss is measured perpendicular to the unit escape direction ``e``:
    with P = I - ee' and Phi the drift block, the best burn direction is the
    top eigenvector of Phi' P Phi, with magnitude D / sqrt(lambda_max). The
    burn sign is fixed so the drift ends on the +e side.
    """
    e = np.asarray(direction_e, dtype=float).reshape(3)
    norm = np.linalg.norm(e)
    if norm < 1e-12 or not np.all(np.isfinite(e)):
        raise ValueError("escape direction must be a nonzero finite vector")
    e = e / norm
    if D < 0:
        raise ValueError("miss distance must be non-negative")
    Phi = drift_position_from_velocity(t_fix, n)
    P = np.eye(3) - np.outer(e, e)
    M = Phi.T @ P @ Phi
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    lam_max = float(w[-1])
    # relative threshold: a drift response many orders below the transition
    # block's own scale is numerical residue of a rank-deficient geometry
    if lam_max <= 1e-12 * float(np.sum(Phi * Phi)):
        raise ValueError("degenerate escape geometry: no perpendicular drift response")
    mag = float(D / np.sqrt(lam_max))
    dv = mag * V[:, -1]
    along = float(np.dot(Phi @ dv, e))
    if along < 0.0 or (along == 0.0 and dv[np.argmax(np.abs(dv))] < 0.0):
        dv = -dv
    return mag, dv


class DvoSelection(NamedTuple):
    delta_v: np.ndarray
    magnitude: float
    direction_e: np.ndarray


def _estimate_positions(estimates: Sequence) -> np.ndarray:
    if len(estimates) == 0:
        raise ValueError("need at least one estimate")
    return np.array([np.asarray(getattr(h, "z", h), dtype=float).reshape(3) for h in estimates])


def dvo_select(
    estimates: Sequence,
    D: float,
    t_fix: float,
    n: float,
    angle_tol: float,
    mouse_pos: np.ndarray | None = None,
    n_cone: int = 8,
    n_azimuth: int = 16,
) -> DvoSelection:
    """Pick the cheapest escape burn within ``angle_tol`` of the natural one.

    The natural escape direction points from the mean of the (filtered, Hill
    frame) pursuer estimates back through the mouse; candidates tilt away from
    it on a fixed cone/azimuth grid, so the sweep is deterministic and always
    contains the initial guess.
    """
    if angle_tol < 0:
        raise ValueError("angle tolerance must be non-negative")
    positions = _estimate_positions(estimates)
    mean = positions.mean(axis=0)
    if mouse_pos is not None:
        mean = mean - np.asarray(mouse_pos, dtype=float).reshape(3)
    dist = np.linalg.norm(mean)
    if dist < 1e-12:
        raise ValueError("pursuer mean coincides with the mouse; escape direction undefined")
    e0 = -mean / dist

    candidates = [e0]
    if angle_tol > 0:
        aux = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(e0, aux)) > 0.9:
            aux = np.array([0.0, 1.0, 0.0])
        b1 = np.cross(e0, aux)
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(e0, b1)
        for psi in np.linspace(0.0, angle_tol, n_cone + 1)[1:]:
            for beta in np.linspace(0.0, 2.0 * np.pi, n_azimuth, endpoint=False):
                candidates.append(
                    np.cos(psi) * e0 + np.sin(psi) * (np.cos(beta) * b1 + np.sin(beta) * b2)
                )

    best: DvoSelection | None = None
    for e in candidates:
        mag, dv = dvo_delta_v(e, D, t_fix, n)
        if best is None or mag < best.magnitude:
            best = DvoSelection(delta_v=dv, magnitude=mag, direction_e=e)
    assert best is not None
    return best


# --------------------------------------------------------------------------
# greedy recursive goal search


@dataclass(eq=False)
class GrsConfig:
    """Knobs for the recursive goal search.

    Candidate goals sit ``d_m`` km from the mean pursuer estimate. Level 0
    grids the caller's angle ranges at ``coarse`` spacing or finer (never
    fewer than ``grid_size`` points per axis), so the pick starts at least as
    good as an exhaustive grid at that resolution. Refinement then descends
    from up to ``n_starts`` well-separated top cells, shrinking a
    ``grid_size``^2 window by ``shrink`` per level until narrower than
    ``tol`` -- the transfer-cost surface folds into creased valleys narrow
    enough that a single greedy descent strands on the wrong one. Scoring is
    the reward surrogate 1 - w_dev*|goal| - w_fuel*f(goal); a pursuer mean
    farther than ``d_far`` from the mouse sends the goal to the origin
    instead.

    ``hold_steps`` > 0 adds the impulse of pinning the goal for that many
    steps to f(goal): a displaced rest point needs continuous thrust against
    the local-frame tidal acceleration (3 n^2 x radially, n^2 z out of
    plane), so radial standoffs are expensive to keep while along-track ones
    are free. Zero restores the bare two-burn transfer cost.
    """

    d_m: float = 25.0
    shrink: float = 4.0
    tol: float = np.deg2rad(0.5)
    grid_size: int = 16
    coarse: float = np.deg2rad(1.0)
    n_starts: int = 4
    d_far: float = 35.0
    w_dev: float = 1.0 / 50.0
    # tuned so a max-thrust step costs about 0.2 at the default step length
    w_fuel: float = 0.2 / (3.0 * 1.0 * 120.0)
    horizon: int = 8
    dt: float = 120.0
    mass: float = 2500.0
    hold_steps: int = 0

    def __post_init__(self):
        if self.d_m <= 0 or self.d_far <= 0:
            raise ValueError("distances must be positive")
        if self.shrink <= 1:
            raise ValueError("shrink factor must exceed 1")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.grid_size < 2:
            raise ValueError("grid must have at least 2 points per axis")
        if self.coarse <= 0:
            raise ValueError("coarse spacing must be positive")
        if self.n_starts < 1:
            raise ValueError("need at least one refinement start")
        if self.w_dev < 0 or self.w_fuel < 0:
            raise ValueError("reward weights must be non-negative")
        if self.horizon < 2 or self.dt <= 0 or self.mass <= 0:
            raise ValueError("invalid transfer-model parameters")
        if self.hold_steps < 0:
            raise ValueError("hold_steps must be non-negative")


@lru_cache(maxsize=64)
def _transfer_model(n: float, dt: float, m: float, horizon: int):
    """Pieces of the two-burn fuel surrogate: reach [g, 0] in ``horizon`` steps
    with one burn now and one at the last step, solved by pseudo-inverse."""
    A, B = discrete_matrices(n, dt, m)
    Bu = B[:, 3:]
    A_pow = np.linalg.matrix_power(A, horizon)
    G = np.hstack([np.linalg.matrix_power(A, horizon - 1) @ Bu, Bu])
    G_inv = np.linalg.pinv(G)
    A_pow.flags.writeable = False
    G_inv.flags.writeable = False
    return A_pow, G_inv


def transfer_fuel(goals: np.ndarray, mouse: HillState, cfg: GrsConfig, n: float) -> np.ndarray:
    """Impulse estimate [N*s] to settle on each goal (rows of ``goals``)."""
    goals = np.atleast_2d(np.asarray(goals, dtype=float))
    A_pow, G_inv = _transfer_model(n, cfg.dt, cfg.mass, cfg.horizon)
    targets = np.zeros((goals.shape[0], 6))
    targets[:, :3] = goals
    U = (targets - A_pow @ mouse.vector) @ G_inv.T
    return np.sum(np.abs(U), axis=1) * cfg.dt


def hold_fuel(goals: np.ndarray, cfg: GrsConfig, n: float) -> np.ndarray:
    """Impulse [N*s] per step to keep each goal pinned against the tide.

    At rest at (x, y, z) the linearized frame accelerates the craft by
    (3 n^2 x, 0, -n^2 z); cancelling it costs per-axis thrust, so the per-step
    impulse is m * (3 n^2 |x| + n^2 |z|) * dt (the factor 1e3 converts the
    km/s^2 acceleration to N on a kg mass).
    """
    goals = np.atleast_2d(np.asarray(goals, dtype=float))
    accel = 3.0 * n * n * np.abs(goals[:, 0]) + n * n * np.abs(goals[:, 2])
    return cfg.mass * accel * 1.0e3 * cfg.dt


def grs_reward(goals: np.ndarray, mouse: HillState, cfg: GrsConfig, n: float) -> np.ndarray:
    """Reward surrogate used to rank candidate goals."""
    goals = np.atleast_2d(np.asarray(goals, dtype=float))
    dev = np.linalg.norm(goals, axis=1)
    fuel = transfer_fuel(goals, mouse, cfg, n)
    if cfg.hold_steps:
        fuel = fuel + cfg.hold_steps * hold_fuel(goals, cfg, n)
    return 1.0 - cfg.w_dev * dev - cfg.w_fuel * fuel


@lru_cache(maxsize=8)
def _lattice(
    phi_lo: float,
    phi_hi: float,
    n_phi: int,
    theta_lo: float,
    theta_hi: float,
    n_theta: int,
) -> np.ndarray:
    """Unit directions of an (elevation x azimuth) lattice, read-only.

    Cached because the controller asks for the identical full-sphere lattice
    every step and the refinement windows repeat across calls.
    """
    phis = np.linspace(phi_lo, phi_hi, n_phi)
    thetas = np.linspace(theta_lo, theta_hi, n_theta)
    pp, tt = np.meshgrid(phis, thetas, indexing="ij")
    unit = np.stack(
        [
            np.cos(pp) * np.sin(tt),
            np.cos(pp) * np.cos(tt),
            np.sin(pp),
        ],
        axis=-1,
    ).reshape(-1, 3)
    unit.flags.writeable = False
    return unit


def _equator_frame(v_hat: np.ndarray) -> np.ndarray:
    """Right-handed frame whose (phi=0, theta=0) direction is ``v_hat``.

    dir(0, 0) of the search parameterization is the local +y axis, so the
    returned columns are (x', v_hat, z'). The helper axis flips deterministically
    to keep the cross products well conditioned.
    """
    helper = (
        np.array([1.0, 0.0, 0.0])
        if abs(v_hat[0]) < 0.9
        else np.array([0.0, 0.0, 1.0])
    )
    e_x = np.cross(v_hat, helper)
    e_x /= np.linalg.norm(e_x)
    e_z = np.cross(e_x, v_hat)
    return np.column_stack([e_x, v_hat, e_z])


def grs(
    phi_range: tuple[float, float],
    theta_range: tuple[float, float],
    cat_positions: Sequence,
    mouse: HillState,
    cfg: GrsConfig,
    n: float,
    trace: list | None = None,
) -> GoalCommand:
    """Lattice-plus-refinement search for the best goal on the d_m sphere.

    ``cat_positions`` are the recent filtered pursuer estimates (Hill km); the
    candidate sphere is centered on their mean. Deterministic: no RNG, ties
    break to the first grid index. ``trace``, when given, collects the
    (phi_range, theta_range) searched per level along the principal descent
    (the one seeded from the best lattice cell).
    """
    positions = _estimate_positions(cat_positions)
    center = positions.mean(axis=0)
    if np.linalg.norm(center - mouse.pos) > cfg.d_far:
        return GoalCommand(target=np.zeros(3), source="return-to-origin")

    phi_lo, phi_hi = float(phi_range[0]), float(phi_range[1])
    theta_lo, theta_hi = float(theta_range[0]), float(theta_range[1])
    if not (phi_hi >= phi_lo and theta_hi >= theta_lo):
        raise ValueError("angle ranges must be ordered (min, max)")

    def points(width: float) -> int:
        # -1e-9 keeps the ceil from jumping a step when the division lands
        # one ulp high, so a full turn at 1 deg spacing stays a 1 deg lattice
        return max(cfg.grid_size, int(np.ceil(width / cfg.coarse - 1e-9)) + 1)

    if trace is not None:
        trace.append(((phi_lo, phi_hi), (theta_lo, theta_hi)))
    n_phi = points(phi_hi - phi_lo)
    n_theta = points(theta_hi - theta_lo)
    unit = _lattice(phi_lo, phi_hi, n_phi, theta_lo, theta_hi, n_theta)
    goals0 = center + cfg.d_m * unit
    rewards0 = grs_reward(goals0, mouse, cfg, n)
    k0 = int(np.argmax(rewards0))
    if max(phi_hi - phi_lo, theta_hi - theta_lo) < cfg.tol:
        return GoalCommand(target=goals0[k0], source="grs")

    def level(frame, lo_hi_phi, lo_hi_theta):
        local = _lattice(
            lo_hi_phi[0],
            lo_hi_phi[1],
            cfg.grid_size,
            lo_hi_theta[0],
            lo_hi_theta[1],
            cfg.grid_size,
        )
        goals = center + cfg.d_m * (local @ frame.T)
        return goals, grs_reward(goals, mouse, cfg, n)

    def descend(goal, reward, width, lvl_trace):
        # each level grids a window around the incumbent in a frame rotated
        # so the incumbent sits on the parameterization's equator; recentring
        # in raw (phi, theta) loses optima near the poles, where theta
        # degenerates and a fixed angular window shrinks to nothing on the
        # sphere
        while True:
            v = goal - center
            frame = _equator_frame(v / np.linalg.norm(v))
            ranges = ((-width / 2.0, width / 2.0), (-width / 2.0, width / 2.0))
            if lvl_trace is not None:
                lvl_trace.append(ranges)
            goals, rewards = level(frame, *ranges)
            k = int(np.argmax(rewards))
            if rewards[k] > reward:
                reward = float(rewards[k])
                goal = goals[k]
            if width < cfg.tol:
                return goal, reward
            width /= cfg.shrink

    # first refinement window covers a lattice cell with margin
    spacing = max(
        (phi_hi - phi_lo) / (n_phi - 1),
        (theta_hi - theta_lo) / (n_theta - 1),
    )
    w1 = cfg.shrink * spacing

    # seed descents from the highest-reward lattice cells, skipping cells
    # within half the first window of an already-chosen seed (they refine
    # into the same basin); on a unimodal surface only one descent remains
    sep_cos = np.cos(min(w1 / 2.0, np.pi / 2.0))
    k_top = min(unit.shape[0], 64)
    part = np.argpartition(-rewards0, k_top - 1)[:k_top]
    order = part[np.lexsort((part, -rewards0[part]))]
    chosen: list[int] = []
    for idx in order:
        if chosen and np.max(unit[chosen] @ unit[idx]) > sep_cos:
            continue
        chosen.append(int(idx))
        if len(chosen) == cfg.n_starts:
            break

    best_goal = goals0[k0]
    best_reward = float(rewards0[k0])
    for i, idx in enumerate(chosen):
        goal, reward = descend(
            goals0[idx],
            float(rewards0[idx]),
            w1,
            trace if i == 0 else None,
        )
        if reward > best_reward:
            best_reward = reward
            best_goal = goal
    return GoalCommand(target=best_goal, source="grs")
