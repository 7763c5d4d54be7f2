"""Orbit-track preparation for replay scenarios.

Public element sets arrive as two-line element (TLE) text. Each record is
propagated on its own near-circular orbit until the next record takes over,
the per-record arcs are blended across their junction discontinuities with a
linear ramp, and the result is resampled and re-expressed as the relative
Hill-frame track of one craft about the other — the CSV format the episode
replayer consumes.

SGP4 is deliberately out of scope: targets here are near-circular, and the
scenario-file interface also accepts externally propagated tracks, so a
high-fidelity propagator can be swapped in upstream without touching this
module.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
from scipy.interpolate import CubicSpline

from .constants import MU_EARTH
from .dynamics import mean_motion
from .env import SCENARIO_HEADER
from .frames import TWO_PI, OrbitalElements, ecef_to_hill, rotation_ecef_to_orbital

DEFAULT_STEP = 3.0  # s, cadence of propagated points

LINE_LENGTH = 69
SECONDS_PER_DAY = 86400.0


def tle_checksum(line: str) -> int:
    """Mod-10 checksum over the first 68 columns: digits count, '-' counts 1."""
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


@dataclass(frozen=True)
class TleRecord:
    """One parsed element set with its raw source lines."""

    satellite_id: int
    epoch: float  # UTC seconds
    line1: str
    line2: str
    elements: OrbitalElements
    eccentricity: float
    rev_per_day: float


def _epoch_seconds(yy: int, day_of_year: float) -> float:
    year = 1900 + yy if yy >= 57 else 2000 + yy
    t = datetime(year, 1, 1, tzinfo=timezone.utc) + timedelta(days=day_of_year - 1.0)
    return t.timestamp()


def _check_line(lineno: int, line: str, leader: str):
    if len(line) != LINE_LENGTH:
        raise ValueError(f"line {lineno}: expected {LINE_LENGTH} characters, got {len(line)}")
    if not line.startswith(leader + " "):
        raise ValueError(f"line {lineno}: expected a TLE line {leader}")
    if not line[68].isdigit():
        raise ValueError(f"line {lineno}: checksum column is not a digit")
    want = int(line[68])
    got = tle_checksum(line)
    if got != want:
        raise ValueError(f"line {lineno}: checksum mismatch (line says {want}, computed {got})")


def _field(lineno: int, line: str, sl: slice, kind, name: str):
    raw = line[sl]
    try:
        return kind(raw)
    except ValueError:
        raise ValueError(f"line {lineno}: malformed {name} field {raw!r}") from None


def _looks_like(line: str, leader: str) -> bool:
    return len(line) == LINE_LENGTH and line.startswith(leader + " ")


def parse_tle(text: str) -> list[TleRecord]:
    """Parse two-line element pairs, tolerating title lines between records.

    Every structural or checksum problem is reported with the 1-based line
    number it occurred on. Records of the same satellite must appear in
    strictly increasing epoch order.
    """
    numbered = [
        (i + 1, ln.rstrip("\r\n").rstrip()) for i, ln in enumerate(text.splitlines())
    ]
    numbered = [(n, ln) for n, ln in numbered if ln.strip()]
    records: list[TleRecord] = []
    last_epoch: dict[int, float] = {}
    i = 0
    while i < len(numbered):
        n1, l1 = numbered[i]
        if not _looks_like(l1, "1"):
            # a title line is fine if an element pair follows it
            if l1[0] == "2":
                raise ValueError(f"line {n1}: TLE line 2 without a preceding line 1")
            if i + 1 < len(numbered) and _looks_like(numbered[i + 1][1], "1"):
                i += 1
                continue
            raise ValueError(f"line {n1}: not a TLE line")
        _check_line(n1, l1, "1")
        if i + 1 >= len(numbered):
            raise ValueError(f"line {n1}: TLE line 1 without a following line 2")
        n2, l2 = numbered[i + 1]
        _check_line(n2, l2, "2")

        sat1 = _field(n1, l1, slice(2, 7), int, "satellite number")
        sat2 = _field(n2, l2, slice(2, 7), int, "satellite number")
        if sat1 != sat2:
            raise ValueError(f"line {n2}: satellite number {sat2} does not match line 1 ({sat1})")
        yy = _field(n1, l1, slice(18, 20), int, "epoch year")
        day = _field(n1, l1, slice(20, 32), float, "epoch day")
        epoch = _epoch_seconds(yy, day)

        incl = _field(n2, l2, slice(8, 16), float, "inclination")
        raan = _field(n2, l2, slice(17, 25), float, "RAAN")
        ecc = _field(n2, l2, slice(26, 33), lambda s: float("0." + s.strip()), "eccentricity")
        argp = _field(n2, l2, slice(34, 42), float, "argument of perigee")
        m_anom = _field(n2, l2, slice(43, 51), float, "mean anomaly")
        rev_day = _field(n2, l2, slice(52, 63), float, "mean motion")
        if rev_day <= 0:
            raise ValueError(f"line {n2}: mean motion must be positive, got {rev_day}")

        n_rad = rev_day * TWO_PI / SECONDS_PER_DAY
        a = (MU_EARTH / n_rad**2) ** (1.0 / 3.0)
        elements = OrbitalElements(
            inclination=np.radians(incl),
            raan=np.radians(raan),
            arg_periapsis=np.radians(argp),
            semi_major_axis=a,
            mean_anomaly=np.radians(m_anom),
        )
        if sat1 in last_epoch and epoch <= last_epoch[sat1]:
            raise ValueError(f"line {n1}: epoch not increasing for satellite {sat1}")
        last_epoch[sat1] = epoch
        records.append(
            TleRecord(
                satellite_id=sat1,
                epoch=epoch,
                line1=l1,
                line2=l2,
                elements=elements,
                eccentricity=ecc,
                rev_per_day=rev_day,
            )
        )
        i += 2
    return records


@dataclass(frozen=True)
class PropagationSegment:
    """Uniformly spaced inertial positions starting at ``start`` (UTC s)."""

    start: float
    dt: float
    points: np.ndarray  # (k+1, 3) km

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ValueError("segment needs at least two 3-vector points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("segment points must be finite")
        if self.dt <= 0:
            raise ValueError("segment dt must be positive")
        object.__setattr__(self, "points", pts)

    @property
    def times(self) -> np.ndarray:
        return self.start + self.dt * np.arange(len(self.points))

    @property
    def end(self) -> float:
        return self.start + self.dt * (len(self.points) - 1)


def propagate_segment(
    rec: TleRecord, until: float, dt: float = DEFAULT_STEP, mu: float = MU_EARTH
) -> PropagationSegment:
    """Coast ``rec`` on its circular orbit to `until`, sampled every ``dt``.

    The stop time snaps up to the sample grid, so the final point lands at or
    just past ``until``.
    """
    if until <= rec.epoch:
        raise ValueError("propagation must end after the record epoch")
    k = int(np.ceil((until - rec.epoch) / dt - 1e-12))
    elems = rec.elements
    a = elems.semi_major_axis
    n = mean_motion(a, mu)
    angles = elems.mean_anomaly + n * dt * np.arange(k + 1)
    p_orb = np.stack(
        [a * np.cos(angles), a * np.sin(angles), np.zeros(k + 1)], axis=1
    )
    points = p_orb @ rotation_ecef_to_orbital(elems)  # (R^T @ p)^T = p^T @ R
    return PropagationSegment(start=rec.epoch, dt=dt, points=points)


def _check_contiguous(segments: list[PropagationSegment]):
    if not segments:
        raise ValueError("no segments to stitch")
    dt = segments[0].dt
    for s in segments[1:]:
        if abs(s.dt - dt) > 1e-12:
            raise ValueError("segments must share one cadence")
    for cur, nxt in zip(segments, segments[1:]):
        # element-set epochs never land exactly on the sample grid (their
        # textual resolution is ~0.9 ms), so allow up to half a step of slop —
        # the junction ramp absorbs it along with the maneuver jump
        offset = nxt.start - cur.end
        if offset < -0.5 * dt:
            raise ValueError("segments overlap in time")
        if offset > 0.5 * dt:
            raise ValueError("gap between segments; propagate up to the next epoch")


def adjust_discontinuities(segments: list[PropagationSegment]) -> list[PropagationSegment]:
    """Spread each junction jump linearly across the earlier segment.

    Point ``i`` of a non-final segment moves by ``e * i / k`` where ``e`` is
    the offset from the segment's last point to the next segment's first and
    ``k`` the segment's step count: nothing at the start, the full jump at the
    end. The final segment is returned untouched. Models the unobserved
    maneuver behind the jump as one impulsive burn.
    """
    _check_contiguous(segments)
    out = []
    for j, seg in enumerate(segments):
        if j == len(segments) - 1:
            out.append(seg)
            continue
        e = segments[j + 1].points[0] - seg.points[-1]
        k = len(seg.points) - 1
        ramp = (np.arange(k + 1, dtype=float) / k)[:, None] * e[None, :]
        out.append(PropagationSegment(seg.start, seg.dt, seg.points + ramp))
    return out


def stitch_segments(segments: list[PropagationSegment]) -> tuple[np.ndarray, np.ndarray]:
    """Blend segments into one uniform trajectory: (times, positions).

    After the junction ramp the last point of each segment coincides with the
    next segment's first sample; the duplicate is dropped (the adjusted
    earlier point is kept).
    """
    adjusted = adjust_discontinuities(segments)
    parts = [adjusted[0].points] + [s.points[1:] for s in adjusted[1:]]
    positions = np.concatenate(parts, axis=0)
    dt = adjusted[0].dt
    times = adjusted[0].start + dt * np.arange(len(positions))
    return times, positions


def build_trajectory(
    records: list[TleRecord],
    dt: float = DEFAULT_STEP,
    until: float | None = None,
    mu: float = MU_EARTH,
) -> tuple[np.ndarray, np.ndarray]:
    """Full stitched track for one satellite from its time-ordered records.

    Each record is propagated until the next record's epoch (snapped up to the
    ``dt`` grid; the junction ramp absorbs the sub-step misalignment along
    with any maneuver). ``until`` extends the final record past its epoch; with
    a single record it is required.
    """
    if not records:
        raise ValueError("no records")
    sat = records[0].satellite_id
    for a, b in zip(records, records[1:]):
        if b.satellite_id != sat:
            raise ValueError("records must belong to one satellite")
        if b.epoch <= a.epoch:
            raise ValueError("record epochs must be strictly increasing")
    segments = []
    grid_start = records[0].epoch
    for rec, nxt in zip(records, records[1:]):
        seg = propagate_segment(rec, rec.epoch + (nxt.epoch - rec.epoch), dt, mu)
        segments.append(PropagationSegment(grid_start, dt, seg.points))
        grid_start = grid_start + dt * (len(seg.points) - 1)
    if until is not None and until > records[-1].epoch:
        seg = propagate_segment(records[-1], until, dt, mu)
        segments.append(PropagationSegment(grid_start, dt, seg.points))
    elif not segments:
        raise ValueError("a single record needs an explicit end time")
    return stitch_segments(segments)


def resample_spline(
    times: np.ndarray, positions: np.ndarray, query: np.ndarray
) -> np.ndarray:
    """Natural cubic-spline positions at ``query`` times (no extrapolation)."""
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    query = np.atleast_1d(np.asarray(query, dtype=float))
    if times.ndim != 1 or len(times) != len(positions):
        raise ValueError("times and positions must align")
    if np.any(query < times[0] - 1e-9) or np.any(query > times[-1] + 1e-9):
        raise ValueError("query times outside the trajectory span")
    spline = CubicSpline(times, positions, axis=0, bc_type="natural")
    return spline(np.clip(query, times[0], times[-1]))


def finite_diff_velocity(positions: np.ndarray, dt: float) -> np.ndarray:
    """Forward-difference velocities; the last sample repeats its predecessor."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or len(positions) < 2:
        raise ValueError("need at least two points to difference")
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = np.empty_like(positions)
    v[:-1] = (positions[1:] - positions[:-1]) / dt
    v[-1] = v[-2]
    return v


def circular_elements_from_state(
    pos: np.ndarray, vel: np.ndarray, mu: float = MU_EARTH
) -> tuple[OrbitalElements, float]:
    """Element set of the circular orbit through ``pos`` moving along ``vel``.

    Radius fixes the semi-major axis; the plane comes from r x v; the in-plane
    phase comes from the position alone, so a slightly noisy velocity only
    tilts the recovered plane. Also returns the relative speed error against
    the circular value — the caller's circularity diagnostic.
    """
    pos = np.asarray(pos, dtype=float).reshape(3)
    vel = np.asarray(vel, dtype=float).reshape(3)
    a = float(np.linalg.norm(pos))
    if a <= 0:
        raise ValueError("position at the origin has no orbit")
    h = np.cross(pos, vel)
    h_norm = float(np.linalg.norm(h))
    if h_norm <= 1e-12 * a * max(float(np.linalg.norm(vel)), 1e-12):
        raise ValueError("velocity parallel to position; orbit plane undefined")
    h_hat = h / h_norm
    inclination = float(np.arccos(np.clip(h_hat[2], -1.0, 1.0)))
    node = np.array([-h_hat[1], h_hat[0], 0.0])  # z-hat cross h-hat
    if np.linalg.norm(node) < 1e-12:
        node = np.array([1.0, 0.0, 0.0])
        raan = 0.0
    else:
        node = node / np.linalg.norm(node)
        raan = float(np.arctan2(node[1], node[0]))
    in_plane = np.cross(h_hat, node)
    r_hat = pos / a
    u = float(np.arctan2(np.dot(r_hat, in_plane), np.dot(r_hat, node)))
    elems = OrbitalElements(
        inclination=inclination,
        raan=raan,
        arg_periapsis=0.0,
        semi_major_axis=a,
        mean_anomaly=u,
    )
    v_circ = np.sqrt(mu / a)
    speed_err = float(abs(np.linalg.norm(vel) - v_circ) / v_circ)
    return elems, speed_err


def relative_hill_track(
    mouse_times: np.ndarray,
    mouse_positions: np.ndarray,
    cat_times: np.ndarray,
    cat_positions: np.ndarray,
    mu: float = MU_EARTH,
    circular_tol: float = 1.0e-3,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cat positions in the mouse's instantaneous Hill frame.

    The cat track is spline-resampled onto the mouse timestamps; the mouse's
    circular elements are recovered pointwise from position plus
    finite-difference velocity. Returns (times, hill positions, flags) where a
    flag marks steps whose speed departs from circular by more than
    ``circular_tol`` (relative).
    """
    mouse_times = np.asarray(mouse_times, dtype=float)
    mouse_positions = np.asarray(mouse_positions, dtype=float)
    if mouse_times.ndim != 1 or len(mouse_times) != len(mouse_positions):
        raise ValueError("mouse times and positions must align")
    if len(mouse_times) < 2:
        raise ValueError("need at least two mouse samples")
    steps = np.diff(mouse_times)
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=0, atol=1e-9):
        raise ValueError("mouse timestamps must be uniformly spaced")
    cat_on_mouse = resample_spline(cat_times, cat_positions, mouse_times)
    velocities = finite_diff_velocity(mouse_positions, dt)
    hill = np.empty_like(mouse_positions)
    flags = np.zeros(len(mouse_times), dtype=bool)
    for i in range(len(mouse_times)):
        elems, speed_err = circular_elements_from_state(
            mouse_positions[i], velocities[i], mu
        )
        flags[i] = speed_err > circular_tol
        hill[i] = ecef_to_hill(cat_on_mouse[i], elems)
    return mouse_times, hill, flags


def write_scenario(path, times: np.ndarray, hill_positions: np.ndarray):
    """Emit the replay CSV (`t_s,x_km,y_km,z_km`) the episode loader reads."""
    times = np.asarray(times, dtype=float)
    hill_positions = np.asarray(hill_positions, dtype=float)
    if len(times) != len(hill_positions):
        raise ValueError("times and positions must align")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCENARIO_HEADER)
        for t, p in zip(times, hill_positions):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in p])
