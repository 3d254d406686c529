"""Scenario transformation: turn the static relative path into trajectories.

Both vehicles drive at constant speed in the global frame.  The challenger
is steered so that its position in the ego's moving frame replays the
(resampled, smoothed) relative path; the ego first follows a pre-planned
smooth connection to the challenger's start point and afterwards tracks the
road corridor the challenger has already defined.  Yaw/pitch rates, the
yaw difference between the vehicles, and the road grade are clamped to the
motorway limits; whatever the clamps cut away shows up as reconstruction
error, it never aborts the scenario.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .pathfind import ApproachPath

# Maximum lateral vehicle offset within the four-lane standard cross
# section; doubles as the default road-envelope half width.
STANDARD_CROSS_SECTION_HALF_WIDTH = 10.875

KMH = 1.0 / 3.6  # km/h -> m/s


def _largest_angle_with_grade(grade: float) -> float:
    """Largest float angle whose float tangent does not exceed the grade."""
    a = math.atan(grade)
    while math.tan(a) > grade:
        a = math.nextafter(a, 0.0)
    return a


@dataclass(frozen=True)
class MotionLimits:
    """Constant speeds, time step and kinematic limits of both vehicles.

    v_ego / v_ch in m/s (defaults: 130 and 80 km/h); dt in s; yaw and pitch
    rates in rad/s; yaw_diff_max is the largest allowed yaw-angle difference
    between the vehicles (rad); grade_max is the maximum road inclination
    as a gradient (0.06 = 6 %).
    """

    v_ego: float = 130.0 * KMH
    v_ch: float = 80.0 * KMH
    dt: float = 0.01
    yaw_rate_max: float = 0.22
    yaw_diff_max: float = 0.21
    pitch_rate_max: float = 0.22
    grade_max: float = 0.06

    def __post_init__(self):
        if not (self.v_ego > self.v_ch > 0.0):
            raise ConfigError(f"need v_ego > v_ch > 0, got v_ego={self.v_ego}, v_ch={self.v_ch}")
        if self.dt <= 0.0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        for name in ("yaw_rate_max", "yaw_diff_max", "pitch_rate_max", "grade_max"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")

    @property
    def v_rel(self) -> float:
        return self.v_ego - self.v_ch

    @property
    def pitch_limit(self) -> float:
        """Pitch angle bound equivalent to grade_max, safe under float tan."""
        return _largest_angle_with_grade(self.grade_max)


@dataclass
class TimedPath:
    """Positions sampled at a uniform time step."""

    t: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if len(self.t) != len(self.positions):
            raise ConfigError("t and positions must have equal length")
        if len(self.t) >= 2:
            steps = np.diff(self.t)
            if np.any(steps <= 0.0) or np.any(np.abs(steps - steps[0]) > 1e-12):
                raise ConfigError("timestamps must increase with a constant step")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class VehicleTrajectory:
    """Timestamped global positions plus yaw/pitch, at constant speed."""

    t: np.ndarray
    positions: np.ndarray
    yaw: np.ndarray
    pitch: np.ndarray
    speed: float

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class ViolationInterval:
    """Global-x range where the challenger leaves the road corridor."""

    x_start: float
    x_end: float
    max_exceedance: float


@dataclass(frozen=True)
class InfeasibilityInterval:
    """Time span where a kinematic clamp cut demanded motion.

    Runs from the first clamped step until the tracking deviation the cut
    caused decays below the recovery tolerance; x bounds are the
    challenger's global x over the span.
    """

    t_start: float
    t_end: float
    x_start: float
    x_end: float
    max_deviation: float


@dataclass
class RoadEnvelope:
    """Corridor around the ego centerline with challenger violations.

    centerline: (N, 3) ego positions; s: arc length per sample;
    violation_flags marks centerline samples inside a violation interval.
    """

    centerline: np.ndarray
    s: np.ndarray
    half_width: float
    violations: list[ViolationInterval]
    violation_flags: np.ndarray


@dataclass
class ScenarioResult:
    """Full transformation output for one scenario."""

    ego: VehicleTrajectory
    challenger: VehicleTrajectory
    duration: float
    ego_distance: float
    challenger_distance: float
    reconstruction_error: np.ndarray
    infeasibility_intervals: list[InfeasibilityInterval]
    phase1_end_time: float
    closest_approach_time: float
    closest_approach_distance: float
    road: RoadEnvelope | None = None


def resample_path(path: ApproachPath | np.ndarray, limits: MotionLimits) -> TimedPath:
    """Sample the path at arc-length steps of v_rel * dt.

    One sample per time step of the scenario: the relative gap between the
    vehicles closes at v_rel, so equal arc spacing equals equal time spacing.
    """
    if limits.v_rel <= 0.0:
        raise ConfigError("relative speed must be > 0 to traverse the path")
    pts = path.positions if isinstance(path, ApproachPath) else np.asarray(path, dtype=float)
    if len(pts) < 2:
        raise ConfigError("path needs at least 2 nodes to resample")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    length = float(cum[-1])
    if length <= 0.0:
        raise ConfigError("path has zero length")
    step = limits.v_rel * limits.dt
    n = int(math.floor(length / step + 1e-9)) + 1
    s = np.arange(n) * step
    samples = np.column_stack([np.interp(s, cum, pts[:, a]) for a in range(3)])
    return TimedPath(t=np.arange(n) * limits.dt, positions=samples)


def smooth_path(path: TimedPath, half_window: float) -> TimedPath:
    """Centered moving average over the sample sequence.

    half_window is in seconds of relative travel; the window shrinks
    symmetrically near the ends, so the first and last samples (challenger
    start and ego position) stay fixed and straight inputs pass unchanged.
    """
    if half_window < 0.0:
        raise ConfigError(f"half_window must be >= 0, got {half_window}")
    n = len(path)
    if n < 3:
        return TimedPath(t=path.t.copy(), positions=path.positions.copy())
    radius = int(round(half_window / path.dt))
    if radius == 0:
        return TimedPath(t=path.t.copy(), positions=path.positions.copy())
    idx = np.arange(n)
    r = np.minimum(radius, np.minimum(idx, n - 1 - idx))
    lo = idx - r
    hi = idx + r + 1
    prefix = np.vstack((np.zeros(3), np.cumsum(path.positions, axis=0)))
    smoothed = (prefix[hi] - prefix[lo]) / (hi - lo)[:, None]
    return TimedPath(t=path.t.copy(), positions=smoothed)


def _direction(yaw: float, pitch: float) -> np.ndarray:
    cp = math.cos(pitch)
    return np.array([cp * math.cos(yaw), cp * math.sin(yaw), math.sin(pitch)])


def _rotation(yaw: float, pitch: float) -> np.ndarray:
    """Ego-frame axes in global coordinates (no roll): forward, left, up."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    return np.array(
        [
            [cy * cp, -sy, -cy * sp],
            [sy * cp, cy, -sy * sp],
            [sp, 0.0, cp],
        ]
    )


def _nudge_within(value: float, base: float, max_delta: float) -> float:
    """Pull value a few ulps toward base until fl(value - base) is in bounds.

    Keeps clamped sequences exactly inside their limits under float
    rounding, so compliance checks hold with zero tolerance.
    """
    while value - base > max_delta:
        value = math.nextafter(value, base)
    while value - base < -max_delta:
        value = math.nextafter(value, base)
    return value


def _clamp_angle(desired, prev, rate_step, other=None, diff_max=None):
    lo = prev - rate_step
    hi = prev + rate_step
    coupled = other is not None
    if coupled:
        lo2 = other - diff_max
        hi2 = other + diff_max
        if lo2 > hi:  # difference bound out of reach; move toward it at max rate
            value = hi
            coupled = False
        elif hi2 < lo:
            value = lo
            coupled = False
        else:
            value = min(max(desired, max(lo, lo2)), min(hi, hi2))
    else:
        value = min(max(desired, lo), hi)
    for _ in range(8):
        adjusted = _nudge_within(value, prev, rate_step)
        if coupled:
            adjusted = _nudge_within(adjusted, other, diff_max)
        if adjusted == value:
            break
        value = adjusted
    return value


def clamp_motion(
    prev_yaw: float,
    prev_pitch: float,
    desired_step: Sequence[float],
    other_yaw: float | None,
    limits: MotionLimits,
) -> tuple[np.ndarray, float, float]:
    """Clamp a desired displacement to the kinematic limits.

    Returns the feasible step with the same magnitude as desired_step plus
    the new yaw and pitch.  Yaw obeys the rate limit and, when other_yaw is
    given, the maximum yaw difference between the vehicles; pitch obeys its
    rate limit and the maximum road grade.  Angles are treated as continuous
    (unwrapped) values, valid for forward motorway driving.
    """
    step = np.asarray(desired_step, dtype=float)
    magnitude = float(np.linalg.norm(step))
    if magnitude == 0.0:
        yaw_des, pitch_des = prev_yaw, prev_pitch
    else:
        yaw_des = math.atan2(step[1], step[0])
        yaw_des += 2.0 * math.pi * round((prev_yaw - yaw_des) / (2.0 * math.pi))
        pitch_des = math.atan2(step[2], math.hypot(step[0], step[1]))

    yaw = _clamp_angle(
        yaw_des, prev_yaw, limits.yaw_rate_max * limits.dt, other_yaw, limits.yaw_diff_max
    )
    pitch_cap = limits.pitch_limit
    pitch = min(max(pitch_des, -pitch_cap), pitch_cap)
    pitch = _clamp_angle(pitch, prev_pitch, limits.pitch_rate_max * limits.dt)
    pitch = min(max(pitch, -pitch_cap), pitch_cap)
    return magnitude * _direction(yaw, pitch), yaw, pitch


class ArcLengthPlan:
    """Polyline looked up by arc length; extrapolates past the last point."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=float)
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.cum = np.concatenate(([0.0], np.cumsum(seg)))
        self.length = float(self.cum[-1])
        last = self.points[-1] - self.points[-2]
        self._end_dir = last / np.linalg.norm(last)

    def point_at(self, s: float) -> np.ndarray:
        if s >= self.length:
            return self.points[-1] + (s - self.length) * self._end_dir
        s = max(s, 0.0)
        return np.array([np.interp(s, self.cum, self.points[:, a]) for a in range(3)])


def hermite_ego_plan(start: Sequence[float], end: Sequence[float], samples: int = 4096) -> ArcLengthPlan:
    """Smooth connection from the ego start to the challenger start.

    Transverse (y, z) components ease in and out with zero slope at both
    ends, since both vehicles head straight along +x at their starting
    points and the road beyond the handoff is challenger-defined.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if end[0] <= start[0]:
        raise ConfigError("challenger start must lie ahead of the ego in x")
    u = np.linspace(0.0, 1.0, samples)
    ease = u * u * (3.0 - 2.0 * u)
    pts = np.empty((samples, 3))
    pts[:, 0] = start[0] + (end[0] - start[0]) * u
    pts[:, 1] = start[1] + (end[1] - start[1]) * ease
    pts[:, 2] = start[2] + (end[2] - start[2]) * ease
    return ArcLengthPlan(pts)


def chord_ego_plan(start: Sequence[float], end: Sequence[float]) -> ArcLengthPlan:
    """Straight-line ego plan; kinks at both ends are absorbed by clamping."""
    return ArcLengthPlan(np.vstack((np.asarray(start, float), np.asarray(end, float))))


def _point_to_polyline(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest point of the polyline (3D)."""
    a = poly[:-1]
    seg = np.diff(poly, axis=0)
    denom = np.maximum(np.einsum("ij,ij->i", seg, seg), 1e-30)
    rel = points[:, None, :] - a[None, :, :]
    frac = np.clip(np.einsum("pij,ij->pi", rel, seg) / denom, 0.0, 1.0)
    closest = rel - frac[:, :, None] * seg[None, :, :]
    return np.sqrt(np.einsum("pij,pij->pi", closest, closest).min(axis=1))


def replay_relative_motion(ego: VehicleTrajectory, challenger: VehicleTrajectory,
                           start: Sequence[float]) -> np.ndarray:
    """Reconstruct the relative motion from the two output trajectories.

    Each step's position-change difference is rotated into the ego's frame
    and the increments are composed from the given start point.  Wherever
    the kinematic clamps never cut a step, the composition reproduces the
    relative-path increments exactly.
    """
    n = len(ego)
    deltas = challenger.positions[1:] - challenger.positions[:-1] - (
        ego.positions[1:] - ego.positions[:-1]
    )
    rec = np.empty((n, 3))
    rec[0] = np.asarray(start, dtype=float)
    for i in range(1, n):
        rot = _rotation(float(ego.yaw[i]), float(ego.pitch[i]))
        rec[i] = rec[i - 1] + rot.T @ deltas[i - 1]
    return rec


def replay_error(oap: TimedPath, ego: VehicleTrajectory, challenger: VehicleTrajectory) -> np.ndarray:
    """Distance between the replayed relative motion and the relative path.

    Measured per sample as the distance from the reconstructed relative
    position to the (smoothed) relative path curve; time stretching caused
    by clamped steps does not count as deviation, shape deviation does.
    """
    rec = replay_relative_motion(ego, challenger, oap.positions[0])
    return _point_to_polyline(rec, oap.positions)


@dataclass
class Phase1Result:
    """Trajectories up to the ego reaching the challenger's start position.

    Carries the handoff state phase 2 continues from, including the
    relative-path progress tracker.
    """

    ego: VehicleTrajectory
    challenger: VehicleTrajectory
    steps: int
    handoff_time: float
    tracker: _RelativeTracker
    residuals: list[float]


class _VehicleState:
    __slots__ = ("pos", "yaw", "pitch", "speed", "t_list", "pos_list", "yaw_list", "pitch_list")

    def __init__(self, position: np.ndarray, speed: float):
        self.pos = np.asarray(position, dtype=float).copy()
        self.yaw = 0.0
        self.pitch = 0.0
        self.speed = speed
        self.t_list = [0.0]
        self.pos_list = [self.pos.copy()]
        self.yaw_list = [0.0]
        self.pitch_list = [0.0]

    def advance(self, desired_step: np.ndarray, other_yaw: float, limits: MotionLimits,
                t: float) -> float:
        """Step toward the demanded direction; returns the directional residual.

        The residual is the distance between the speed-scaled demand
        direction and the step actually taken, i.e. how much the angle
        clamps cut this step.  Magnitude mismatches of a true displacement
        demand are the caller's to account for.
        """
        norm = float(np.linalg.norm(desired_step))
        if norm == 0.0:
            desired = self.speed * limits.dt * _direction(self.yaw, self.pitch)
        else:
            desired = desired_step * (self.speed * limits.dt / norm)
        step, self.yaw, self.pitch = clamp_motion(self.yaw, self.pitch, desired, other_yaw, limits)
        self.pos = self.pos + step
        self.t_list.append(t)
        self.pos_list.append(self.pos.copy())
        self.yaw_list.append(self.yaw)
        self.pitch_list.append(self.pitch)
        if norm == 0.0:
            return 0.0
        return float(np.linalg.norm(desired - step))

    def trajectory(self) -> VehicleTrajectory:
        return VehicleTrajectory(
            t=np.array(self.t_list),
            positions=np.array(self.pos_list),
            yaw=np.array(self.yaw_list),
            pitch=np.array(self.pitch_list),
            speed=self.speed,
        )


class _RelativeTracker:
    """Progress state of the relative-path realization.

    The cursor is the arc projection of the reconstructed relative position
    onto the path, so clamped steps stretch the schedule instead of
    desynchronizing the remainder.  The demanded increment follows the
    local tangent plus a capped cross-track pull; the along-track component
    is never fought, because two constant-speed vehicles cannot realize a
    relative speed below v_ego - v_ch.
    """

    FEEDBACK_CAP = 0.08        # max cross-track pull, fraction of one step
    PROJECTION_WINDOW = 12.0   # m of arc searched around the cursor

    def __init__(self, oap: TimedPath, limits: MotionLimits):
        self.path = oap.positions
        seg = np.diff(self.path, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.cum = np.concatenate(([0.0], np.cumsum(self.seg_len)))
        self.length = float(self.cum[-1])
        self.step = limits.v_rel * limits.dt
        self.s = 0.0
        self.rec = self.path[0].copy()

    def _segment(self, s: float) -> int:
        i = int(np.searchsorted(self.cum, min(max(s, 0.0), self.length), side="right")) - 1
        return min(max(i, 0), len(self.path) - 2)

    def _tangent(self, s: float) -> np.ndarray:
        i = self._segment(s)
        while self.seg_len[i] <= 1e-12 and i > 0:
            i -= 1
        d = self.path[i + 1] - self.path[i]
        n = float(np.linalg.norm(d))
        return d / n if n > 0.0 else np.array([-1.0, 0.0, 0.0])

    def _point(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = self._segment(s)
        if self.seg_len[i] <= 1e-12:
            return self.path[i].copy()
        frac = (s - self.cum[i]) / self.seg_len[i]
        return self.path[i] + frac * (self.path[i + 1] - self.path[i])

    def _project(self) -> float:
        """Arc parameter of the path point nearest rec, near the cursor."""
        lo = self._segment(self.s - self.PROJECTION_WINDOW)
        hi = self._segment(self.s + self.PROJECTION_WINDOW) + 1
        a = self.path[lo:hi]
        seg = self.path[lo + 1:hi + 1] - a
        denom = np.maximum(np.einsum("ij,ij->i", seg, seg), 1e-30)
        frac = np.clip(np.einsum("ij,ij->i", self.rec - a, seg) / denom, 0.0, 1.0)
        d2 = np.einsum("ij,ij->i", self.rec - a - frac[:, None] * seg,
                       self.rec - a - frac[:, None] * seg)
        k = int(np.argmin(d2))
        return float(self.cum[lo + k] + frac[k] * self.seg_len[lo + k])

    def required_increment(self) -> np.ndarray:
        self.s = self._project()
        tangent = self._tangent(self.s)
        nominal = min(self.step, max(self.length - self.s, 0.0)) * tangent
        pull = self._point(self.s) - self.rec  # cross-track by construction
        cap = self.FEEDBACK_CAP * self.step
        pull_norm = float(np.linalg.norm(pull))
        if pull_norm > cap:
            pull *= cap / pull_norm
        return nominal + pull

    def register(self, realized: np.ndarray) -> None:
        """Fold in the relative motion that actually happened."""
        self.rec = self.rec + realized


def transform_phase1(
    oap: TimedPath,
    limits: MotionLimits,
    ego_plan: ArcLengthPlan | None = None,
) -> Phase1Result:
    """Drive both vehicles until the ego reaches the challenger's start x.

    The ego follows its pre-planned connection toward the challenger start;
    each step the challenger is steered so the relative position in the ego
    frame follows the timed relative path, then clamped to the limits.
    """
    if len(oap) < 2:
        raise ConfigError("timed path needs at least 2 samples")
    v1 = oap.positions[0]
    vn = oap.positions[-1]
    if v1[0] <= vn[0]:
        raise ConfigError("challenger start must lie ahead of the ego in x")
    if ego_plan is None:
        ego_plan = hermite_ego_plan(vn, v1)

    ego = _VehicleState(vn, limits.v_ego)
    ch = _VehicleState(v1, limits.v_ch)
    handoff_x = float(v1[0])
    dt = limits.dt
    max_steps = int((handoff_x - ego.pos[0]) / (limits.v_ego * dt) * 4.0) + 1000

    tracker = _RelativeTracker(oap, limits)
    residuals: list[float] = []
    m = 0
    while ego.pos[0] <= handoff_x:
        m += 1
        if m > max_steps:
            raise RuntimeError("phase 1 failed to reach the challenger start position")
        t = m * dt
        ego_target = ego_plan.point_at(limits.v_ego * t)
        prev_ego = ego.pos
        res_e = ego.advance(ego_target - ego.pos, ch.yaw, limits, t)
        # required challenger step: ego's actual step plus the relative-path
        # increment rotated into the ego's orientation (never involves the
        # full relative offset, so the demand stays near the challenger speed)
        rot = _rotation(ego.yaw, ego.pitch)
        prev_ch = ch.pos
        dc_req = (ego.pos - prev_ego) + rot @ tracker.required_increment()
        ch.advance(dc_req, ego.yaw, limits, t)
        # the challenger demand is a true displacement: count direction
        # cuts and the speed mismatch alike
        res_c = float(np.linalg.norm(dc_req - (ch.pos - prev_ch)))
        tracker.register(rot.T @ ((ch.pos - prev_ch) - (ego.pos - prev_ego)))
        residuals.append(max(res_e, res_c))

    return Phase1Result(
        ego=ego.trajectory(), challenger=ch.trajectory(), steps=m, handoff_time=m * dt,
        tracker=tracker, residuals=residuals,
    )


# A step counts as cut when the clamps removed more than this fraction of
# one nominal step; an interval ends once the shape deviation the cut left
# behind has decayed below the recovery tolerance.
CLAMP_RESIDUAL_FRACTION = 0.05
REPLAY_RECOVERY_TOLERANCE = 0.5  # m

# Pure-pursuit lookahead for the ego following the challenger-defined road
# in phase 2; chasing the corridor point directly excites an oscillation
# between the ego's corner cutting and the challenger's corrections.
EGO_CORRIDOR_LOOKAHEAD = 15.0  # m
# Arc half-window of the corridor moving average the ego actually tracks.
CORRIDOR_SMOOTH_RADIUS = 30.0  # m


def _infeasibility_intervals(
    residuals: np.ndarray,
    recon_err: np.ndarray,
    challenger: VehicleTrajectory,
    limits: MotionLimits,
) -> list[InfeasibilityInterval]:
    n = len(recon_err)
    threshold = CLAMP_RESIDUAL_FRACTION * limits.v_ch * limits.dt
    flagged = np.zeros(n, dtype=bool)
    flagged[1:] = residuals > threshold
    covered = np.zeros(n, dtype=bool)
    intervals: list[InfeasibilityInterval] = []
    ch_x = challenger.positions[:, 0]
    i = 0
    while i < n:
        if not flagged[i] or covered[i]:
            i += 1
            continue
        # the deviation ramp into the cut, the run of cut steps, then the
        # decay of the deviation they caused
        lo = i
        while lo - 1 > 0 and not covered[lo - 1] and recon_err[lo - 1] > REPLAY_RECOVERY_TOLERANCE:
            lo -= 1
        j = i
        while j + 1 < n and (flagged[j + 1] or recon_err[j + 1] > REPLAY_RECOVERY_TOLERANCE):
            j += 1
        span = slice(lo, j + 1)
        intervals.append(
            InfeasibilityInterval(
                t_start=float(challenger.t[lo]),
                t_end=float(challenger.t[j]),
                x_start=float(ch_x[span].min()),
                x_end=float(ch_x[span].max()),
                max_deviation=float(recon_err[span].max()),
            )
        )
        covered[span] = True
        i = j + 1
    return intervals


class _Corridor:
    """Challenger track consumed by the ego in phase 2, indexed by arc length.

    Every challenger step has the same length v_ch * dt, so the arc
    parameter of recorded point i is simply i times that step.  The ego
    follows a moving-average of the track: the road is the corridor around
    the challenger's line, not the line itself, and the raw line can bend
    faster than the quicker ego can steer.
    """

    def __init__(self, points: list[np.ndarray], step_length: float, smooth_radius: float):
        self.points = points
        self.step = step_length
        self.radius = max(int(round(smooth_radius / step_length)), 0)
        self._prefix = [np.zeros(3)]
        for p in points:
            self._prefix.append(self._prefix[-1] + p)

    def append(self, point: np.ndarray):
        self.points.append(point)
        self._prefix.append(self._prefix[-1] + point)

    def _raw(self, i: int, frac: float, fallback_dir: np.ndarray, s: float) -> np.ndarray:
        if i < 0:
            return self.points[0]
        if i >= len(self.points) - 1:
            return self.points[-1] + (s - (len(self.points) - 1) * self.step) * fallback_dir
        return self.points[i] + frac * (self.points[i + 1] - self.points[i])

    def point_at(self, s: float, fallback_dir: np.ndarray) -> np.ndarray:
        u = s / self.step
        i = int(math.floor(u))
        r = min(self.radius, i, len(self.points) - 1 - i)
        if r <= 0:
            return self._raw(i, u - i, fallback_dir, s)
        return (self._prefix[i + r + 1] - self._prefix[i - r]) / (2 * r + 1)

    def project(self, point: np.ndarray) -> float:
        """Arc parameter of the polyline point nearest to the given point."""
        best_s = 0.0
        best_d = math.inf
        for i in range(len(self.points) - 1):
            a = self.points[i]
            b = self.points[i + 1]
            ab = b - a
            denom = float(ab @ ab)
            frac = 0.0 if denom == 0.0 else min(max(float((point - a) @ ab) / denom, 0.0), 1.0)
            d = float(np.linalg.norm(point - (a + frac * ab)))
            if d < best_d:
                best_d = d
                best_s = (i + frac) * self.step
        return best_s


def transform_phase2(
    oap: TimedPath,
    phase1: Phase1Result,
    limits: MotionLimits,
) -> ScenarioResult:
    """Continue from the handoff until the ego catches the challenger.

    The ego now tracks the corridor the challenger has already driven; the
    challenger keeps realizing the relative path against the ego's actual
    motion.  Ends when the ego's global x passes the challenger's.
    """
    dt = limits.dt
    ego = _VehicleState(phase1.ego.positions[0], limits.v_ego)
    ego.t_list = list(phase1.ego.t)
    ego.pos_list = [p.copy() for p in phase1.ego.positions]
    ego.yaw_list = list(phase1.ego.yaw)
    ego.pitch_list = list(phase1.ego.pitch)
    ego.pos = phase1.ego.positions[-1].copy()
    ego.yaw = float(phase1.ego.yaw[-1])
    ego.pitch = float(phase1.ego.pitch[-1])

    ch = _VehicleState(phase1.challenger.positions[0], limits.v_ch)
    ch.t_list = list(phase1.challenger.t)
    ch.pos_list = [p.copy() for p in phase1.challenger.positions]
    ch.yaw_list = list(phase1.challenger.yaw)
    ch.pitch_list = list(phase1.challenger.pitch)
    ch.pos = phase1.challenger.positions[-1].copy()
    ch.yaw = float(phase1.challenger.yaw[-1])
    ch.pitch = float(phase1.challenger.pitch[-1])

    corridor = _Corridor(
        [p.copy() for p in phase1.challenger.positions], limits.v_ch * dt,
        CORRIDOR_SMOOTH_RADIUS,
    )
    s_ego = corridor.project(ego.pos)

    m = phase1.steps
    gap = float(ch.pos[0] - ego.pos[0])
    max_steps = m + int(gap / (limits.v_rel * dt) * 6.0) + 2000

    tracker = phase1.tracker
    residuals = list(phase1.residuals)
    lookahead = EGO_CORRIDOR_LOOKAHEAD
    while ego.pos[0] <= ch.pos[0]:
        m += 1
        if m > max_steps:
            raise RuntimeError("phase 2 failed to close the gap between the vehicles")
        t = m * dt
        s_ego += limits.v_ego * dt
        ego_target = corridor.point_at(s_ego + lookahead, _direction(ch.yaw, ch.pitch))
        prev_ego = ego.pos
        res_e = ego.advance(ego_target - ego.pos, ch.yaw, limits, t)
        rot = _rotation(ego.yaw, ego.pitch)
        prev_ch = ch.pos
        dc_req = (ego.pos - prev_ego) + rot @ tracker.required_increment()
        ch.advance(dc_req, ego.yaw, limits, t)
        res_c = float(np.linalg.norm(dc_req - (ch.pos - prev_ch)))
        tracker.register(rot.T @ ((ch.pos - prev_ch) - (ego.pos - prev_ego)))
        corridor.append(ch.pos.copy())
        residuals.append(max(res_e, res_c))

    ego_traj = ego.trajectory()
    ch_traj = ch.trajectory()
    duration = m * dt
    recon_err = replay_error(oap, ego_traj, ch_traj)
    infeasible = _infeasibility_intervals(
        np.asarray(residuals), recon_err, ch_traj, limits
    )

    separation = np.linalg.norm(ch_traj.positions - ego_traj.positions, axis=1)
    closest = int(np.argmin(separation))

    return ScenarioResult(
        ego=ego_traj,
        challenger=ch_traj,
        duration=duration,
        ego_distance=limits.v_ego * duration,
        challenger_distance=limits.v_ch * duration,
        reconstruction_error=recon_err,
        infeasibility_intervals=infeasible,
        phase1_end_time=phase1.handoff_time,
        closest_approach_time=float(ego_traj.t[closest]),
        closest_approach_distance=float(separation[closest]),
    )


def transform_scenario(
    oap: TimedPath,
    limits: MotionLimits,
    ego_plan: ArcLengthPlan | None = None,
) -> ScenarioResult:
    """Run both transformation phases and return the assembled scenario."""
    return transform_phase2(oap, transform_phase1(oap, limits, ego_plan), limits)


def derive_road_envelope(
    result: ScenarioResult,
    cross_section_half_width: float = STANDARD_CROSS_SECTION_HALF_WIDTH,
) -> RoadEnvelope:
    """Corridor around the ego trajectory and challenger limit violations.

    The ego is the reference in the middle of the road; the challenger must
    stay within the cross-section half width of the centerline (measured in
    the xy-plane against the full driven centerline).  Exactly reaching the
    half width is not a violation.
    """
    if cross_section_half_width <= 0.0:
        raise ConfigError("half width must be > 0")
    center = result.ego.positions
    seg_vec = np.diff(center[:, :2], axis=0)
    seg_len = np.linalg.norm(seg_vec, axis=1)
    s = np.concatenate(([0.0], np.cumsum(seg_len)))

    pts = result.challenger.positions[:, :2]
    a = center[:-1, :2]
    denom = np.maximum(np.einsum("ij,ij->i", seg_vec, seg_vec), 1e-30)
    # point-to-segment distances, challenger samples x centerline segments
    rel = pts[:, None, :] - a[None, :, :]
    frac = np.clip(np.einsum("pij,ij->pi", rel, seg_vec) / denom, 0.0, 1.0)
    closest = rel - frac[:, :, None] * seg_vec[None, :, :]
    dist2 = np.einsum("pij,pij->pi", closest, closest)
    seg_idx = np.argmin(dist2, axis=1)
    rows = np.arange(len(pts))
    offsets = np.sqrt(dist2[rows, seg_idx])
    s_star = s[seg_idx] + frac[rows, seg_idx] * seg_len[seg_idx]

    violating = offsets > cross_section_half_width
    violations: list[ViolationInterval] = []
    flags = np.zeros(len(center), dtype=bool)
    i = 0
    ch_x = result.challenger.positions[:, 0]
    while i < len(pts):
        if not violating[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(pts) and violating[j + 1]:
            j += 1
        group = slice(i, j + 1)
        violations.append(
            ViolationInterval(
                x_start=float(ch_x[group].min()),
                x_end=float(ch_x[group].max()),
                max_exceedance=float((offsets[group] - cross_section_half_width).max()),
            )
        )
        flags |= (s >= s_star[group].min()) & (s <= s_star[group].max())
        i = j + 1

    violations.sort(key=lambda v: v.x_start)
    merged: list[ViolationInterval] = []
    for v in violations:
        if merged and v.x_start <= merged[-1].x_end:
            last = merged.pop()
            v = ViolationInterval(
                x_start=last.x_start,
                x_end=max(last.x_end, v.x_end),
                max_exceedance=max(last.max_exceedance, v.max_exceedance),
            )
        merged.append(v)

    return RoadEnvelope(
        centerline=center.copy(),
        s=s,
        half_width=cross_section_half_width,
        violations=merged,
        violation_flags=flags,
    )
