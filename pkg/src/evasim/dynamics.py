"""Relative-motion dynamics about a circular reference orbit.

Hill-frame translational dynamics (x radial, y along-track, z orbit-normal):

    xdd = 3 n^2 x + 2 n yd + Tx / m
    ydd =          -2 n xd + Ty / m
    zdd = -n^2 z           + Tz / m

with thrust T in newtons and all lengths in km (thrust acceleration is
converted N/kg -> km/s^2). Zero-input flow has the classic closed-form state
transition matrix, which is also what the discrete step and the MPC layer use,
so simulator and controller share one model by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .constants import MU_EARTH
from .frames import OrbitalElements, rotation_ecef_to_orbital, wrap_angle

# N/kg -> km/s^2
_THRUST_ACCEL = 1.0e-3


def mean_motion(semi_major_axis: float, mu: float = MU_EARTH) -> float:
    """Mean motion n = sqrt(mu / a^3) [rad/s] of a circular orbit."""
    if semi_major_axis <= 0:
        raise ValueError("semi-major axis must be positive")
    return float(np.sqrt(mu / semi_major_axis**3))


def propagate_circular(
    elems: OrbitalElements, t: float, mu: float = MU_EARTH
) -> tuple[np.ndarray, np.ndarray]:
    """ECEF position/velocity of a circular orbit ``t`` seconds past epoch.

    Mean anomaly advances linearly, M = M0 + n t; in the orbital plane the
    craft sits at a*(cos M, sin M) moving prograde with speed sqrt(mu/a).
    """
    a = elems.semi_major_axis
    n = mean_motion(a, mu)
    M = elems.mean_anomaly + n * t
    cM, sM = np.cos(M), np.sin(M)
    v = np.sqrt(mu / a)
    p_orb = np.array([a * cM, a * sM, 0.0])
    v_orb = np.array([-v * sM, v * cM, 0.0])
    R_oe = rotation_ecef_to_orbital(elems).T
    return R_oe @ p_orb, R_oe @ v_orb


def advance_elements(elems: OrbitalElements, t: float, mu: float = MU_EARTH) -> OrbitalElements:
    """Element set with mean anomaly advanced by n*t (circular orbit)."""
    n = mean_motion(elems.semi_major_axis, mu)
    return elems.with_mean_anomaly(wrap_angle(elems.mean_anomaly + n * t))


@dataclass
class HillState:
    """Relative state in the Hill frame: position km, velocity km/s."""

    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float).reshape(3)
        self.vel = np.asarray(self.vel, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.pos)) and np.all(np.isfinite(self.vel))):
            raise ValueError("HillState components must be finite")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "HillState":
        x = np.asarray(x, dtype=float).reshape(6)
        return cls(x[:3].copy(), x[3:].copy())

    @classmethod
    def zero(cls) -> "HillState":
        return cls(np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class ThrustCommand:
    """Piecewise-constant body thrust [N per axis] held for ``dt`` seconds."""

    thrust: np.ndarray
    dt: float

    def __post_init__(self):
        t = np.asarray(self.thrust, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("thrust must be finite")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "thrust", t)

    def impulse(self) -> float:
        """Fuel accounting surrogate: sum_axis |T| * dt [N*s]."""
        return float(np.sum(np.abs(self.thrust)) * self.dt)


@dataclass
class CraftParams:
    """Spacecraft bookkeeping: mass, per-axis thrust bound, fuel used."""

    mass: float = 2500.0
    thrust_limit: float = 1.0
    fuel_used: float = field(default=0.0)

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.thrust_limit <= 0:
            raise ValueError("thrust limit must be positive")

    def register_burn(self, u: ThrustCommand) -> float:
        """Accumulate fuel for a command; returns the increment [N*s]."""
        inc = u.impulse()
        self.fuel_used += inc
        return inc


def cw_derivative(s: HillState, u: ThrustCommand, n: float, m: float) -> np.ndarray:
    """Instantaneous state derivative [pos_dot, vel_dot] of the CW equations."""
    x, y, z = s.pos
    xd, yd, zd = s.vel
    ax, ay, az = u.thrust * (_THRUST_ACCEL / m)
    return np.array(
        [
            xd,
            yd,
            zd,
            3.0 * n**2 * x + 2.0 * n * yd + ax,
            -2.0 * n * xd + ay,
            -(n**2) * z + az,
        ]
    )


@lru_cache(maxsize=None)
def discrete_matrices(n: float, dt: float, m: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of the CW dynamics.

    Returns (A, B): A is the 6x6 closed-form CW transition matrix over dt; B is
    6x6 and maps the stacked input [0, 0, 0, Tx, Ty, Tz] (N, held over dt) to
    its state contribution, i.e. only the last three columns are nonzero. Both
    arrays are cached and write-protected so every caller — simulator and
    controllers alike — shares the identical model object. The cache is
    unbounded on purpose: entries are ~1 KB and derived results hold
    references into them, so eviction would silently fork the model.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if m <= 0:
        raise ValueError("mass must be positive")
    nt = n * dt
    s, c = np.sin(nt), np.cos(nt)

    A = np.zeros((6, 6))
    # position from position
    A[0, 0] = 4.0 - 3.0 * c
    A[1, 0] = 6.0 * (s - nt)
    A[1, 1] = 1.0
    A[2, 2] = c
    # position from velocity
    A[0, 3] = s / n
    A[0, 4] = 2.0 * (1.0 - c) / n
    A[1, 3] = -2.0 * (1.0 - c) / n
    A[1, 4] = (4.0 * s - 3.0 * nt) / n
    A[2, 5] = s / n
    # velocity from position
    A[3, 0] = 3.0 * n * s
    A[4, 0] = -6.0 * n * (1.0 - c)
    A[5, 2] = -n * s
    # velocity from velocity
    A[3, 3] = c
    A[3, 4] = 2.0 * s
    A[4, 3] = -2.0 * s
    A[4, 4] = 4.0 * c - 3.0
    A[5, 5] = c

    # response to a constant acceleration over [0, dt]: integral of the
    # transition blocks (position <- int Phi_rv, velocity <- int Phi_vv)
    bp = np.zeros((3, 3))
    bp[0, 0] = (1.0 - c) / n**2
    bp[0, 1] = 2.0 * (nt - s) / n**2
    bp[1, 0] = -2.0 * (nt - s) / n**2
    bp[1, 1] = 4.0 * (1.0 - c) / n**2 - 1.5 * dt**2
    bp[2, 2] = (1.0 - c) / n**2
    bv = np.zeros((3, 3))
    bv[0, 0] = s / n
    bv[0, 1] = 2.0 * (1.0 - c) / n
    bv[1, 0] = -2.0 * (1.0 - c) / n
    bv[1, 1] = 4.0 * s / n - 3.0 * dt
    bv[2, 2] = s / n

    k = _THRUST_ACCEL / m  # N -> km/s^2
    B = np.zeros((6, 6))
    B[:3, 3:] = bp * k
    B[3:, 3:] = bv * k

    A.flags.writeable = False
    B.flags.writeable = False
    return A, B


def cw_step(s: HillState, u: ThrustCommand, n: float, m: float) -> HillState:
    """Advance a Hill state one zero-order-hold step under command ``u``.

    Pure function; fuel accounting belongs to the caller (see
    :meth:`CraftParams.register_burn`).
    """
    A, B = discrete_matrices(n, u.dt, m)
    stacked = np.concatenate([np.zeros(3), u.thrust])
    return HillState.from_vector(A @ s.vector + B @ stacked)
