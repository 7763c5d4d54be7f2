"""RF-geolocation sensing of a transmitting spacecraft.

A Walker-style constellation of circular-orbit receivers listens for the
pursuer's RF beam. Receivers inside the transmission cone (and not occluded by
Earth) form TDOA measurements against the lowest-index visible receiver; the
TDOA Cramer-Rao bound gives the per-axis accuracy floor, which is then used to
synthesize noisy position estimates at a curriculum-scaled noise level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .constants import C_LIGHT, MU_EARTH, R_EARTH
from .frames import OrbitalElements, rotation_ecef_to_orbital

# TDOA timing jitter [s] (~6 m ranging); calibration knob, see
# scripts/calibrate_sensing.py for how the default was chosen
DEFAULT_SIGMA_D = 2.0e-8

# per-axis sigma [km] reported when the geolocation geometry is singular
SENTINEL_SIGMA_KM = 1.0e4

# transmit-cone half angle [rad]. A literal 1-degree half-angle cone from GEO
# subtends far too little of a LEO shell to contain double-digit receiver
# counts; this default is calibrated so nadir GEO pointing sees ~10-25 of a
# 60-craft shell at random epochs.
DEFAULT_BEAM_HALF_ANGLE = 0.158


@dataclass(frozen=True)
class ConstellationConfig:
    """Walker-style shell: ``size`` craft split over ``planes`` polar planes.

    Planes are spread evenly in RAAN over [0, pi); slots are spread evenly in
    mean anomaly with an inter-plane phase step of ``phasing`` * 2*pi/size.
    """

    size: int = 60
    planes: int = 6
    altitude_km: float = 550.0
    inclination: float = np.pi / 2
    phasing: int = 1

    def __post_init__(self):
        if self.size <= 0 or self.planes <= 0:
            raise ValueError("size and planes must be positive")
        if self.size % self.planes != 0:
            raise ValueError(f"size {self.size} not divisible by planes {self.planes}")
        if self.altitude_km <= 0:
            raise ValueError("altitude must be positive")

    @property
    def semi_major_axis(self) -> float:
        return R_EARTH + self.altitude_km


def build_walker(cfg: ConstellationConfig) -> list[OrbitalElements]:
    """Element sets for every craft of the shell, plane-major order."""
    per_plane = cfg.size // cfg.planes
    out = []
    for p in range(cfg.planes):
        raan = np.pi * p / cfg.planes
        for s in range(per_plane):
            m0 = 2 * np.pi * s / per_plane + 2 * np.pi * cfg.phasing * p / cfg.size
            out.append(
                OrbitalElements(
                    inclination=cfg.inclination,
                    raan=raan,
                    arg_periapsis=0.0,
                    semi_major_axis=cfg.semi_major_axis,
                    mean_anomaly=m0,
                )
            )
    return out


class SensorArray:
    """Vectorized position evaluation for a list of circular-orbit craft."""

    def __init__(self, sats: Sequence[OrbitalElements], mu: float = MU_EARTH):
        self.sats = list(sats)
        if not self.sats:
            raise ValueError("empty constellation")
        a = np.array([s.semi_major_axis for s in self.sats])
        self._a = a
        self._n = np.sqrt(mu / a**3)
        self._m0 = np.array([s.mean_anomaly for s in self.sats])
        # orbital->ECEF rotation is constant per craft
        self._rot = np.stack([rotation_ecef_to_orbital(s).T for s in self.sats])

    def __len__(self) -> int:
        return len(self.sats)

    def positions_at(self, t: float) -> np.ndarray:
        """(M, 3) ECEF positions at ``t`` seconds past epoch."""
        M = self._m0 + self._n * t
        p_orb = np.stack(
            [self._a * np.cos(M), self._a * np.sin(M), np.zeros_like(M)], axis=1
        )
        return np.einsum("mij,mj->mi", self._rot, p_orb)


@dataclass(frozen=True)
class BeamSpec:
    """Conical RF transmission: half-angle [rad] and boresight unit vector.

    ``boresight=None`` means nadir pointing (from the transmitter toward
    Earth's center), resolved per evaluation.
    """

    half_angle: float = DEFAULT_BEAM_HALF_ANGLE
    boresight: np.ndarray | None = None

    def __post_init__(self):
        if not (0 < self.half_angle <= np.pi / 2):
            raise ValueError(f"half angle must be in (0, pi/2], got {self.half_angle}")
        if self.boresight is not None:
            b = np.asarray(self.boresight, dtype=float).reshape(3)
            nb = np.linalg.norm(b)
            if not np.isfinite(nb) or nb == 0:
                raise ValueError("boresight must be a finite nonzero vector")
            object.__setattr__(self, "boresight", b / nb)

    def axis(self, source: np.ndarray) -> np.ndarray:
        if self.boresight is not None:
            return self.boresight
        r = np.linalg.norm(source)
        if r == 0:
            raise ValueError("nadir boresight undefined at the origin")
        return -np.asarray(source, dtype=float) / r


def in_beam(x_a: np.ndarray, x_i: np.ndarray, beam: BeamSpec) -> tuple[bool, float]:
    """Whether receiver ``x_i`` lies inside the cone transmitted from ``x_a``.

    Returns (hit, off_axis_angle). The off-axis angle is
    asin(|(x_a - x_i) x b| / |x_a - x_i|); a receiver behind the transmitter
    (negative boresight projection) is never a hit even at small angle.
    """
    x_a = np.asarray(x_a, dtype=float)
    x_i = np.asarray(x_i, dtype=float)
    d = x_i - x_a
    r = np.linalg.norm(d)
    if r == 0:
        raise ValueError("receiver coincides with transmitter")
    b = beam.axis(x_a)
    phi = float(np.arcsin(min(1.0, np.linalg.norm(np.cross(x_a - x_i, b)) / r)))
    forward = float(np.dot(d, b)) > 0.0
    return (forward and phi <= beam.half_angle), phi


def earth_occluded(x_a: np.ndarray, x_i: np.ndarray, radius: float = R_EARTH) -> bool:
    """True if the segment transmitter->receiver passes through the Earth."""
    d = np.asarray(x_i, dtype=float) - np.asarray(x_a, dtype=float)
    dd = float(np.dot(d, d))
    if dd == 0:
        return False
    t = np.clip(-float(np.dot(x_a, d)) / dd, 0.0, 1.0)
    closest = np.asarray(x_a, dtype=float) + t * d
    return float(np.linalg.norm(closest)) < radius


def visible_sensors(
    x_a: np.ndarray,
    sensor_positions: np.ndarray,
    beam: BeamSpec,
    earth_radius: float = R_EARTH,
) -> np.ndarray:
    """Indices (ascending) of receivers inside the beam with clear line of sight.

    Vectorized over an (M, 3) position array.
    """
    x_a = np.asarray(x_a, dtype=float).reshape(3)
    pts = np.asarray(sensor_positions, dtype=float)
    d = pts - x_a[None, :]
    r = np.linalg.norm(d, axis=1)
    if np.any(r == 0):
        raise ValueError("receiver coincides with transmitter")
    b = beam.axis(x_a)
    cross = np.cross(-d, b[None, :])
    sin_phi = np.clip(np.linalg.norm(cross, axis=1) / r, 0.0, 1.0)
    phi = np.arcsin(sin_phi)
    forward = d @ b > 0.0
    hit = forward & (phi <= beam.half_angle)

    # occlusion: closest point of each segment to Earth's center
    dd = np.einsum("ij,ij->i", d, d)
    t = np.clip(-(d @ x_a) / dd, 0.0, 1.0)
    closest = x_a[None, :] + t[:, None] * d
    clear = np.linalg.norm(closest, axis=1) >= earth_radius
    return np.nonzero(hit & clear)[0]


class TdoaSample(NamedTuple):
    """Differential arrival times vs the reference (first) receiver [s]."""

    taus: np.ndarray
    reference: int


def tdoa_measure(
    x_a: np.ndarray,
    sensors: np.ndarray,
    sigma_d: float,
    rng: np.random.Generator,
) -> TdoaSample:
    """One TDOA vector: tau_i = (|x_a - x_i| - |x_a - x_ref|)/c + N(0, sigma_d^2).

    ``sensors`` is the (M, 3) visible set, ascending index order; row 0 is the
    reference.
    """
    sensors = np.asarray(sensors, dtype=float)
    if sensors.ndim != 2 or sensors.shape[0] < 2:
        raise ValueError("need at least two visible receivers for TDOA")
    if sigma_d < 0:
        raise ValueError("sigma_d must be non-negative")
    ranges = np.linalg.norm(sensors - np.asarray(x_a, dtype=float)[None, :], axis=1)
    delta = ranges[1:] - ranges[0]
    taus = delta / C_LIGHT + rng.normal(0.0, sigma_d, size=delta.shape)
    return TdoaSample(taus=taus, reference=0)


class CrlbResult(NamedTuple):
    cov: np.ndarray  # 3x3 position covariance floor [km^2]
    singular: bool


def crlb(x_a: np.ndarray, sensors: np.ndarray, sigma_d: float = DEFAULT_SIGMA_D) -> CrlbResult:
    """TDOA position Cramer-Rao bound for a transmitter at ``x_a``.

    The measurement Jacobian has rows
    unit(x_i - x_a) - unit(x_ref - x_a), i = 1..M-1, and the TDOA range-error
    covariance is Q = c^2 sigma_d^2 / 2 * (I + 1 1^T), whose inverse is
    analytic. Degenerate geometry (rank-deficient information) is flagged and
    carries a large-sigma sentinel instead of raising.
    """
    sensors = np.asarray(sensors, dtype=float)
    if sensors.ndim != 2 or sensors.shape[0] < 4:
        raise ValueError("need at least four visible receivers for a 3-D CRLB")
    if sigma_d <= 0:
        raise ValueError("sigma_d must be positive")
    x_a = np.asarray(x_a, dtype=float).reshape(3)
    diff = sensors - x_a[None, :]
    units = diff / np.linalg.norm(diff, axis=1)[:, None]
    J = units[1:] - units[0]
    M = sensors.shape[0]
    # Q^-1 = 2/(c^2 sigma_d^2) * (I - 1 1^T / M)
    scale = 2.0 / (C_LIGHT**2 * sigma_d**2)
    JtJ = J.T @ J
    ones_proj = np.outer(J.sum(axis=0), J.sum(axis=0)) / M
    fim = scale * (JtJ - ones_proj)
    fim = 0.5 * (fim + fim.T)
    eigvals = np.linalg.eigvalsh(fim)
    if eigvals[0] <= eigvals[-1] * 1e-12 or eigvals[-1] <= 0.0:
        return CrlbResult(np.eye(3) * SENTINEL_SIGMA_KM**2, True)
    cov = np.linalg.inv(fim)
    cov = 0.5 * (cov + cov.T)
    # numerically near-singular inversions can still explode; cap at sentinel
    if np.any(np.diag(cov) > SENTINEL_SIGMA_KM**2):
        return CrlbResult(np.eye(3) * SENTINEL_SIGMA_KM**2, True)
    return CrlbResult(cov, False)


@dataclass(frozen=True)
class CatEstimate:
    """A synthesized position fix of the transmitting craft.

    ``z`` is ECEF km; ``sigma`` the per-axis standard deviation actually used
    to draw it (curriculum-scaled); ``t`` the measurement time; ``n_visible``
    how many receivers contributed.
    """

    z: np.ndarray
    sigma: np.ndarray
    t: float
    n_visible: int

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(3))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.z)):
            raise ValueError("estimate position must be finite")
        if np.any(self.sigma < 0) or not np.all(np.isfinite(self.sigma)):
            raise ValueError("estimate sigmas must be finite and non-negative")


def sample_estimate(
    x_a: np.ndarray,
    cov: np.ndarray,
    alpha: float,
    t: float,
    n_visible: int,
    rng: np.random.Generator,
) -> CatEstimate:
    """Draw z = x_a + alpha * N(0, diag(CRLB)) with per-axis stds.

    ``alpha`` in [0, 1] is the curriculum noise scale; alpha = 0 returns the
    exact position with zero reported sigma.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    sig = alpha * np.sqrt(np.clip(np.diag(np.asarray(cov, dtype=float)), 0.0, None))
    z = np.asarray(x_a, dtype=float) + rng.normal(0.0, 1.0, size=3) * sig
    return CatEstimate(z=z, sigma=sig, t=t, n_visible=n_visible)
