"""Reference-frame bookkeeping and transforms.

Three frames are used:

* ECEF: Earth-centered frame treated as inertial at the time scales simulated
  here. All absolute positions/velocities are ECEF km, km/s.
* orbital: perifocal-style frame of a circular reference orbit; x toward the
  mean-anomaly origin, z along the orbit normal.
* Hill: local frame riding the reference orbit at mean anomaly M — x radial
  (outward), y along-track (velocity direction), z orbit-normal. A co-orbital
  point slightly ahead of the origin sits at a constant +y offset.

Rotation matrices are returned as C-contiguous (row-major) 3x3 ndarrays that
map coordinates *into* the named target frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [0, 2*pi)."""
    return float(np.mod(theta, TWO_PI))


@dataclass(frozen=True)
class OrbitalElements:
    """Circular-orbit element set (angles rad, semi-major axis km).

    Attributes
    ----------
    inclination : float
        Orbit inclination i.
    raan : float
        Right ascension of the ascending node, Omega.
    arg_periapsis : float
        Argument of periapsis omega (for a circular orbit this is just the
        in-plane phase reference for mean anomaly).
    semi_major_axis : float
        a, km. Must be positive.
    mean_anomaly : float
        M at the epoch the element set describes.
    """

    inclination: float
    raan: float
    arg_periapsis: float
    semi_major_axis: float
    mean_anomaly: float

    def __post_init__(self):
        if not np.isfinite(self.semi_major_axis) or self.semi_major_axis <= 0.0:
            raise ValueError(f"semi-major axis must be positive, got {self.semi_major_axis}")
        for name in ("inclination", "raan", "arg_periapsis", "mean_anomaly"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, wrap_angle(v))

    def with_mean_anomaly(self, mean_anomaly: float) -> "OrbitalElements":
        return OrbitalElements(
            self.inclination,
            self.raan,
            self.arg_periapsis,
            self.semi_major_axis,
            mean_anomaly,
        )


def rotation_ecef_to_orbital(elems: OrbitalElements) -> np.ndarray:
    """DCM taking ECEF coordinates into the orbital (perifocal) frame.

    Composition Rz(arg_periapsis) @ Rx(inclination) @ Rz(raan), written out.
    """
    ci, si = np.cos(elems.inclination), np.sin(elems.inclination)
    cO, sO = np.cos(elems.raan), np.sin(elems.raan)
    cw, sw = np.cos(elems.arg_periapsis), np.sin(elems.arg_periapsis)
    return np.array(
        [
            [cO * cw - sO * ci * sw, sO * cw + cO * ci * sw, si * sw],
            [-cO * sw - sO * ci * cw, -sO * sw + cO * ci * cw, si * cw],
            [sO * si, -cO * si, ci],
        ]
    )


def rotation_orbital_to_hill(mean_anomaly: float) -> np.ndarray:
    """DCM taking orbital-frame coordinates into the Hill frame at anomaly M.

    Rows are the Hill basis vectors (radial, along-track, normal) expressed in
    the orbital frame; a planar rotation about the orbit normal.
    """
    cM, sM = np.cos(mean_anomaly), np.sin(mean_anomaly)
    return np.array(
        [
            [cM, sM, 0.0],
            [-sM, cM, 0.0],
            [0.0, 0.0, 1.0],
        ]
    )


def hill_frame_origin_ecef(elems: OrbitalElements) -> np.ndarray:
    """ECEF position of the Hill-frame origin (the point on the reference orbit
    at ``elems.mean_anomaly``)."""
    a = elems.semi_major_axis
    cM, sM = np.cos(elems.mean_anomaly), np.sin(elems.mean_anomaly)
    p_orb = np.array([a * cM, a * sM, 0.0])
    return rotation_ecef_to_orbital(elems).T @ p_orb


def rotation_ecef_to_hill(elems: OrbitalElements) -> np.ndarray:
    return rotation_orbital_to_hill(elems.mean_anomaly) @ rotation_ecef_to_orbital(elems)


def ecef_to_hill(p_ecef: np.ndarray, origin: OrbitalElements) -> np.ndarray:
    """Map an ECEF position (km) into Hill coordinates of ``origin``."""
    p_ecef = np.asarray(p_ecef, dtype=float)
    if p_ecef.shape != (3,) or not np.all(np.isfinite(p_ecef)):
        raise ValueError("p_ecef must be a finite 3-vector")
    rel = p_ecef - hill_frame_origin_ecef(origin)
    return rotation_ecef_to_hill(origin) @ rel


def hill_to_ecef(p_hill: np.ndarray, origin: OrbitalElements) -> np.ndarray:
    """Inverse of :func:`ecef_to_hill`."""
    p_hill = np.asarray(p_hill, dtype=float)
    if p_hill.shape != (3,) or not np.all(np.isfinite(p_hill)):
        raise ValueError("p_hill must be a finite 3-vector")
    R = rotation_ecef_to_hill(origin)
    return R.T @ p_hill + hill_frame_origin_ecef(origin)


def ecef_state_to_hill(
    pos_ecef: np.ndarray,
    vel_ecef: np.ndarray,
    origin: OrbitalElements,
    mean_motion: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Map an ECEF position/velocity pair into the rotating Hill frame.

    The velocity is the rotating-frame derivative (transport theorem), so the
    result is directly comparable with CW states: a co-orbital point maps to a
    constant (0, y, 0) with zero Hill velocity.
    """
    from .dynamics import propagate_circular  # local import: avoid cycle

    p_h = ecef_to_hill(np.asarray(pos_ecef, dtype=float), origin)
    _, v_origin = propagate_circular(origin, 0.0)
    R = rotation_ecef_to_hill(origin)
    v_rel = R @ (np.asarray(vel_ecef, dtype=float) - v_origin)
    omega = np.array([0.0, 0.0, mean_motion])
    return p_h, v_rel - np.cross(omega, p_h)


def hill_state_to_ecef(
    pos_hill: np.ndarray,
    vel_hill: np.ndarray,
    origin: OrbitalElements,
    mean_motion: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`ecef_state_to_hill`."""
    from .dynamics import propagate_circular

    p_e = hill_to_ecef(np.asarray(pos_hill, dtype=float), origin)
    _, v_origin = propagate_circular(origin, 0.0)
    R = rotation_ecef_to_hill(origin)
    omega = np.array([0.0, 0.0, mean_motion])
    v_e = R.T @ (np.asarray(vel_hill, dtype=float) + np.cross(omega, pos_hill)) + v_origin
    return p_e, v_e
