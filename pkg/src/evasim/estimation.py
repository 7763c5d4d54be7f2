"""Extended Kalman filter over the pursuer's ECEF state.

The filter runs on position/velocity under two-body gravity: the predict step
integrates Newton's equations directly (RK4) and propagates covariance with a
second-order Taylor state-transition matrix; the update step fuses
position-only fixes whose per-axis sigmas ride along on the estimate itself.
Baseline controllers consume the filtered state after mapping it into the
Hill frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import MU_EARTH
from .frames import OrbitalElements, ecef_to_hill, ecef_state_to_hill
from .rfsense import CatEstimate

# default diagonal process noise added each predict, keeps P from collapsing
DEFAULT_Q_PROC = 1.0e-8

# sigma floor [km] so exact (zero-noise curriculum) fixes keep R invertible-ish
MEASUREMENT_SIGMA_FLOOR = 0.0


@dataclass
class EkfState:
    """Filter value: 6-vector ECEF [pos km, vel km/s], covariance, timestamp."""

    x: np.ndarray
    P: np.ndarray
    t: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(6)
        self.P = np.asarray(self.P, dtype=float).reshape(6, 6)
        if not np.all(np.isfinite(self.x)):
            raise ValueError("EKF state must be finite")
        if not np.allclose(self.P, self.P.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")

    @property
    def pos(self) -> np.ndarray:
        return self.x[:3]

    @property
    def vel(self) -> np.ndarray:
        return self.x[3:]


def two_body_derivative(x: np.ndarray, mu: float = MU_EARTH) -> np.ndarray:
    r = x[:3]
    rn = np.linalg.norm(r)
    if rn < 1.0:
        raise ValueError("two-body propagation singular near the origin")
    return np.concatenate([x[3:], -mu * r / rn**3])


def state_transition(x: np.ndarray, dt: float, mu: float = MU_EARTH) -> np.ndarray:
    """Second-order Taylor transition Phi = I + F dt + F^2 dt^2/2.

    F is the two-body dynamics Jacobian at ``x``: velocity block identity and
    gravity-gradient block mu/r^3 (3 rhat rhat^T - I).
    """
    r = x[:3]
    rn = np.linalg.norm(r)
    if rn < 1.0:
        raise ValueError("two-body propagation singular near the origin")
    rhat = r / rn
    G = (mu / rn**3) * (3.0 * np.outer(rhat, rhat) - np.eye(3))
    F = np.zeros((6, 6))
    F[:3, 3:] = np.eye(3)
    F[3:, :3] = G
    return np.eye(6) + F * dt + (F @ F) * (dt * dt / 2.0)


def _rk4_two_body(x: np.ndarray, dt: float, mu: float) -> np.ndarray:
    k1 = two_body_derivative(x, mu)
    k2 = two_body_derivative(x + 0.5 * dt * k1, mu)
    k3 = two_body_derivative(x + 0.5 * dt * k2, mu)
    k4 = two_body_derivative(x + dt * k3, mu)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def ekf_predict(
    s: EkfState, dt: float, q_proc: float = DEFAULT_Q_PROC, mu: float = MU_EARTH
) -> EkfState:
    """Propagate state and covariance one step under two-body gravity."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x_new = _rk4_two_body(s.x, dt, mu)
    Phi = state_transition(s.x, dt, mu)
    P_new = Phi @ s.P @ Phi.T
    if q_proc:
        P_new = P_new + q_proc * np.eye(6)
    P_new = 0.5 * (P_new + P_new.T)
    return EkfState(x=x_new, P=P_new, t=s.t + dt)


def ekf_update(
    s: EkfState,
    z: CatEstimate,
    r_override: np.ndarray | None = None,
    sigma_floor: float = MEASUREMENT_SIGMA_FLOOR,
) -> EkfState:
    """Fuse a position fix. R defaults to diag(z.sigma^2); a constant R can be
    supplied instead via ``r_override``."""
    if r_override is not None:
        R = np.asarray(r_override, dtype=float).reshape(3, 3)
        if np.any(np.linalg.eigvalsh(0.5 * (R + R.T)) < 0):
            raise ValueError("measurement covariance must be PSD")
    else:
        sig = np.maximum(z.sigma, sigma_floor)
        R = np.diag(sig**2)
    H = np.zeros((3, 6))
    H[:, :3] = np.eye(3)
    S = H @ s.P @ H.T + R
    K = s.P @ H.T @ np.linalg.inv(S)
    innov = z.z - s.x[:3]
    x_new = s.x + K @ innov
    P_new = (np.eye(6) - K @ H) @ s.P
    P_new = 0.5 * (P_new + P_new.T)
    return EkfState(x=x_new, P=P_new, t=s.t)


def ekf_init(
    first: CatEstimate,
    velocity_guess: np.ndarray,
    pos_sigma: np.ndarray | float,
    vel_sigma: float = 1e-2,
    t: float = 0.0,
) -> EkfState:
    """Filter start: first fix as position, caller-supplied velocity guess.

    ``pos_sigma`` is the per-axis initial position std [km] (e.g. the mean
    noise-floor sigmas of the configured constellation size); ``vel_sigma``
    the per-axis velocity std [km/s].
    """
    pos_sigma = np.broadcast_to(np.asarray(pos_sigma, dtype=float), (3,))
    P = np.diag(np.concatenate([pos_sigma**2, np.full(3, vel_sigma**2)]))
    x = np.concatenate([first.z, np.asarray(velocity_guess, dtype=float).reshape(3)])
    return EkfState(x=x, P=P, t=t)


def ekf_to_hill(s: EkfState, origin: OrbitalElements) -> np.ndarray:
    """Filtered position mapped into the Hill frame of ``origin``."""
    return ecef_to_hill(s.x[:3], origin)


def ekf_state_to_hill(
    s: EkfState, origin: OrbitalElements, mean_motion: float
) -> tuple[np.ndarray, np.ndarray]:
    """Filtered position and rotating-frame velocity in the Hill frame."""
    return ecef_state_to_hill(s.x[:3], s.x[3:], origin, mean_motion)
