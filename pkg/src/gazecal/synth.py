"""Ground-truth gaze-trace simulator.

A script moves the head along a piecewise-linear path while the eye
alternates between fixations on scene points and saccades. Fixations track
their target exactly (smooth pursuit under head motion); noise is added on
the sphere and the tracker output is produced by un-applying the true
offset, so ``calibrate(g_raw, true_offset, mode)`` recovers the noisy visual
axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ScriptError, TargetNotVisible
from .eye_model import MODES, CalibrationParams, homogeneous, uncalibrate
from .geometry import look_at
from .trace import GroundTruth, Trace

SURFACE_TOL = 1e-3  # m
SACCADE_FLOOR = 100.0  # deg/s
MAX_EYE_ANGLE = 80.0  # deg off the camera axis


@dataclass(frozen=True)
class Waypoint:
    position: tuple
    look_at: tuple

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        object.__setattr__(self, "look_at", tuple(float(x) for x in self.look_at))


@dataclass(frozen=True)
class Fixation:
    target: tuple
    duration: float

    kind = "fixation"

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(float(x) for x in self.target))


@dataclass(frozen=True)
class Saccade:
    duration: float

    kind = "saccade"


@dataclass(frozen=True)
class SimScript:
    scene: object
    waypoints: tuple
    segments: tuple
    true_offset: CalibrationParams = CalibrationParams()
    mode: str = "opt"
    noise_std_deg: float = 0.0
    blinks: tuple = ()  # (start_s, duration_s) pairs
    sampling_rate_hz: float = 50.0
    speed_mps: float = 0.7 / 3.6
    loop: bool = False
    seed: int = 0
    scene_ref: str = "room"

    def __post_init__(self):
        object.__setattr__(self, "true_offset", CalibrationParams.coerce(self.true_offset))
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "blinks", tuple((float(a), float(b)) for a, b in self.blinks))

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def frame_bounds(self) -> np.ndarray:
        """Frame index at which each segment starts, plus the total frame count."""
        cum = np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])
        return np.round(cum * self.sampling_rate_hz).astype(np.int64)


def _validate(script: SimScript):
    if script.mode not in MODES:
        raise ScriptError(f"unknown gaze mode {script.mode!r}")
    if not script.sampling_rate_hz > 0:
        raise ScriptError("sampling rate must be positive")
    if not script.speed_mps >= 0:
        raise ScriptError("speed must be non-negative")
    if not script.noise_std_deg >= 0:
        raise ScriptError("noise std must be non-negative")
    if not script.waypoints:
        raise ScriptError("script needs at least one waypoint")
    if not script.segments:
        raise ScriptError("script needs at least one segment")
    for i, s in enumerate(script.segments):
        if not s.duration > 0:
            raise ScriptError(f"segment {i} has non-positive duration")
        if s.kind == "saccade":
            prev_ok = i > 0 and script.segments[i - 1].kind == "fixation"
            next_ok = i + 1 < len(script.segments) and script.segments[i + 1].kind == "fixation"
            if not (prev_ok and next_ok):
                raise ScriptError(f"saccade segment {i} must sit between two fixations")
    bounds = script.frame_bounds()
    if np.any(np.diff(bounds) < 1):
        raise ScriptError("every segment must span at least one frame")
    for a, b in script.blinks:
        if not b > 0:
            raise ScriptError("blink durations must be positive")


def _path(script: SimScript):
    pos = np.array([w.position for w in script.waypoints], dtype=float)
    tgt = np.array([w.look_at for w in script.waypoints], dtype=float)
    if script.loop and len(pos) > 1:
        pos = np.vstack([pos, pos[:1]])
        tgt = np.vstack([tgt, tgt[:1]])
    return pos, tgt


def head_poses(script: SimScript, times):
    """Camera rotations ``(n, 3, 3)`` and positions ``(n, 3)`` at ``times``."""
    pos, tgt = _path(script)
    times = np.asarray(times, dtype=float)
    if len(pos) == 1:
        p = np.repeat(pos, len(times), axis=0)
        la = np.repeat(tgt, len(times), axis=0)
    else:
        seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        total = cum[-1]
        s = script.speed_mps * times
        if total <= 0:
            s = np.zeros_like(times)
        elif script.loop:
            s = np.mod(s, total)
        else:
            s = np.minimum(s, total)
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(seg[k] > 0, (s - cum[k]) / seg[k], 0.0)
        f = np.clip(f, 0.0, 1.0)[:, None]
        p = pos[k] * (1 - f) + pos[k + 1] * f
        la = tgt[k] * (1 - f) + tgt[k + 1] * f
    return look_at(p, la), p


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _slerp(a, b, f):
    cos = np.clip(np.dot(a, b), -1.0, 1.0)
    ang = math.acos(cos)
    if ang < 1e-12:
        return np.repeat(a[None], len(f), axis=0)
    f = np.asarray(f)[:, None]
    return (np.sin((1 - f) * ang) * a + np.sin(f * ang) * b) / math.sin(ang)


def perturb(directions, noise_std_deg, normals):
    """Isotropic Gaussian angular noise on unit directions.

    ``normals`` (n, 2) are standard normal draws; each direction moves along
    the sphere by ``noise_std_deg * normals`` (degrees, per tangent axis).
    """
    d = _unit(np.asarray(directions, dtype=float))
    helper = np.where(np.abs(d[:, 1:2]) < 0.9, [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
    e1 = _unit(np.cross(helper, d))
    e2 = np.cross(d, e1)
    step = np.radians(noise_std_deg) * np.asarray(normals, dtype=float)
    v = step[:, :1] * e1 + step[:, 1:] * e2
    ang = np.linalg.norm(v, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        axis = np.where(ang > 0, v / np.where(ang > 0, ang, 1.0), 0.0)
    return np.cos(ang) * d + np.sin(ang) * axis


def _check_target(scene, positions, target, seg_id):
    d = target[None] - positions
    dist = np.linalg.norm(d, axis=1)
    t, tri = scene.cast(positions, d)
    hit = np.where(tri >= 0, t * dist, np.inf)
    if np.any(hit < dist - SURFACE_TOL):
        raise TargetNotVisible(f"fixation {seg_id}: target occluded from the head path")
    if np.any(hit > dist + SURFACE_TOL):
        raise ScriptError(f"fixation {seg_id}: target is not on a scene surface")


def exact_gaze(script: SimScript):
    """Noise-free visual-axis directions (camera frame, unit) with poses and labels."""
    _validate(script)
    bounds = script.frame_bounds()
    n = int(bounds[-1])
    times = np.arange(n) / script.sampling_rate_hz
    R, p = head_poses(script, times)
    labels = np.repeat(np.arange(len(script.segments)), np.diff(bounds))
    world = np.empty((n, 3))
    for i, s in enumerate(script.segments):
        a, b = bounds[i], bounds[i + 1]
        if s.kind == "fixation":
            tgt = np.array(s.target)
            _check_target(script.scene, p[a:b], tgt, i)
            world[a:b] = _unit(tgt[None] - p[a:b])
    for i, s in enumerate(script.segments):
        if s.kind != "saccade":
            continue
        a, b = bounds[i], bounds[i + 1]
        # endpoints are the neighbouring fixation frames, so every step is equal
        f = np.arange(1, b - a + 1) / (b - a + 1)
        world[a:b] = _slerp(world[a - 1], world[b], f)
    cam = np.einsum("nji,nj->ni", R, world)
    if np.any(cam[:, 2] <= math.cos(math.radians(MAX_EYE_ANGLE))):
        k = int(np.flatnonzero(cam[:, 2] <= math.cos(math.radians(MAX_EYE_ANGLE)))[0])
        raise ScriptError(f"frame {k}: gaze is more than {MAX_EYE_ANGLE:g} deg off the head axis")
    return times, R, p, cam, labels, bounds


def saccade_velocities(script: SimScript, cam, labels):
    """Angular velocity (deg/s) of each consecutive pair labeled as one saccade."""
    kinds = np.array([s.kind == "saccade" for s in script.segments])
    same = (labels[1:] == labels[:-1]) & kinds[labels[1:]]
    cos = np.clip(np.sum(cam[1:] * cam[:-1], axis=1), -1, 1)
    vel = np.degrees(np.arccos(cos)) * script.sampling_rate_hz
    return vel[same]


def simulate(script: SimScript) -> Trace:
    """Render a script into a trace with ground-truth annotations."""
    times, R, p, cam, labels, bounds = exact_gaze(script)
    n = len(times)
    vel = saccade_velocities(script, cam, labels)
    if np.any(vel < SACCADE_FLOOR):
        raise ScriptError(f"saccade slower than {SACCADE_FLOOR:g} deg/s; shorten it or widen the jump")
    rng = np.random.default_rng(script.seed)
    normals = rng.standard_normal((n, 2))
    vis = perturb(cam, script.noise_std_deg, normals)
    g_raw = uncalibrate(homogeneous(vis), script.true_offset, script.mode)
    openness = np.ones(n)
    rate = script.sampling_rate_hz
    for start, dur in script.blinks:
        # frame arithmetic, so 0.2 + 0.1 s closes exactly five frames at 50 Hz
        k0 = max(0, math.ceil(start * rate - 1e-9))
        k1 = min(n, math.ceil((start + dur) * rate - 1e-9))
        openness[k0:k1] = 0.0
    segs = []
    for i, s in enumerate(script.segments):
        entry = {"kind": s.kind, "start": int(bounds[i]), "stop": int(bounds[i + 1])}
        if s.kind == "fixation":
            entry["target"] = list(s.target)
        segs.append(entry)
    truth = GroundTruth(script.true_offset, script.mode, labels, segs)
    return Trace(times, g_raw[:, :2], R, p, openness, truth)


# -- random scripts ---------------------------------------------------------

@dataclass(frozen=True)
class WalkSpec:
    """Knobs for :func:`random_script`. Distances in metres, angles in degrees."""

    distance_m: float = 20.0
    speed_mps: float = 0.7 / 3.6
    loop_side_m: float = 2.0
    clockwise: bool = False
    reverse_laps: bool = True  # alternate lap direction, as when walking a marked outline
    head_turn_rate: float = 60.0  # deg/s
    eye_height_m: float = 1.6
    lookahead_m: float = 2.0  # head faces the path point this far ahead
    head_yaw_amp: float = 15.0
    head_yaw_hz: float = 0.13
    head_pitch_amp: float = 20.0
    head_pitch_hz: float = 0.35
    head_pitch_bias: float = -5.0
    waypoint_step_m: float = 0.1
    fixation_s: tuple = (0.4, 1.0)
    min_fixation_s: float = 0.2  # shortest duration tried when placement gets hard
    min_target_distance_m: float = 1.0
    eye_yaw: float = 25.0
    eye_pitch: float = 15.0
    max_pursuit: float = 60.0  # deg/s eye-in-head speed allowed during a fixation
    min_saccade_deg: float = 16.0
    saccade_speed: float = 350.0  # deg/s lower bound used to size saccades
    blink_rate_hz: float = 0.0
    blink_s: float = 0.15
    sampling_rate_hz: float = 50.0
    center: tuple = (0.0, 0.0)
    static_duration_s: float = 10.0  # walk length when speed is zero


def _lap_corners(spec, lap):
    side = spec.loop_side_m
    # upper-right corner first, counter-clockwise seen from above (+y)
    corners = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) * side / 2 + list(spec.center)
    cw = spec.clockwise ^ (spec.reverse_laps and lap % 2 == 1)
    return corners[[0, 3, 2, 1]] if cw else corners


def _loop_point(spec, s, lap=None):
    """Position (x, z) at arc length ``s`` of the unrolled lap sequence.

    With ``lap`` given, ``s`` is clamped to that lap.
    """
    per = 4 * spec.loop_side_m
    if lap is None:
        lap = int(s // per)
    r = min(max(s - lap * per, 0.0), per)
    corners = _lap_corners(spec, lap)
    k = min(int(r // spec.loop_side_m), 3)
    f = (r - k * spec.loop_side_m) / spec.loop_side_m
    return corners[k] * (1 - f) + corners[(k + 1) % 4] * f


def _walk_waypoints(spec: WalkSpec, duration):
    """Head path over the unrolled laps with a look-ahead heading.

    The head turns (at most ``head_turn_rate``) toward the point
    ``lookahead_m`` further along the current lap and wanders around that
    heading in yaw and pitch. Waypoints every ``waypoint_step_m`` keep the
    interpolated motion smooth.
    """
    h = spec.eye_height_m
    if spec.loop_side_m <= 0 or spec.speed_mps <= 0:
        x, z = spec.center
        pitch = math.radians(spec.head_pitch_bias)
        return (Waypoint((x, h, z), (x, h + 3.0 * math.sin(pitch), z + 3.0 * math.cos(pitch))),)
    length = spec.speed_mps * duration + spec.waypoint_step_m
    n = int(math.ceil(length / spec.waypoint_step_m)) + 1
    per = 4 * spec.loop_side_m
    max_turn = math.radians(spec.head_turn_rate) * spec.waypoint_step_m / spec.speed_mps
    wps = []
    heading = None
    for i in range(n):
        s = i * spec.waypoint_step_m
        t = s / spec.speed_mps
        lap = int(s // per)
        x, z = _loop_point(spec, s)
        ax, az = _loop_point(spec, s + spec.lookahead_m, lap)
        if math.hypot(ax - x, az - z) < 0.3:
            # lap end: keep facing along the current side
            bx, bz = _loop_point(spec, s - 0.3, lap)
            ax, az = 2 * x - bx, 2 * z - bz
        want = math.atan2(ax - x, az - z)
        if heading is None:
            heading = want
        else:
            turn = (want - heading + math.pi) % (2 * math.pi) - math.pi
            heading += max(-max_turn, min(max_turn, turn))
        yaw = heading + math.radians(spec.head_yaw_amp * math.sin(2 * math.pi * spec.head_yaw_hz * t))
        pitch = math.radians(spec.head_pitch_bias
                             + spec.head_pitch_amp * math.sin(2 * math.pi * spec.head_pitch_hz * t))
        look = (x + 3.0 * math.cos(pitch) * math.sin(yaw), h + 3.0 * math.sin(pitch),
                z + 3.0 * math.cos(pitch) * math.cos(yaw))
        wps.append(Waypoint((x, h, z), look))
    return tuple(wps)


def _angle_deg(a, b):
    return np.degrees(np.arccos(np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)))


def random_script(scene, seed=0, true_offset=None, mode="opt", noise_std_deg=0.0,
                  spec: WalkSpec = WalkSpec(), max_tries=300) -> SimScript:
    """Random walk-and-look script: alternating fixations and fast saccades.

    Targets are surface points at least ``min_target_distance_m`` away that
    stay visible for the whole fixation and never need an eye-in-head speed
    above ``max_pursuit``. ``true_offset`` defaults to a uniform draw from
    [-5, 5]^2.
    """
    rng = np.random.default_rng([int(seed), 7])
    if true_offset is None:
        true_offset = rng.uniform(-5.0, 5.0, 2)
    rate = spec.sampling_rate_hz
    moving = spec.speed_mps > 0 and spec.loop_side_m > 0
    duration = spec.distance_m / spec.speed_mps if moving else spec.static_duration_s
    speed = spec.speed_mps if moving else 0.0
    # slack for corner cutting between frames and for the last fixation
    horizon_s = duration * 1.02 + max(spec.fixation_s) + 1.0
    waypoints = _walk_waypoints(spec, horizon_s)
    probe = SimScript(scene, waypoints, (Saccade(1.0),), speed_mps=speed, sampling_rate_hz=rate)

    horizon = int(round(horizon_s * rate)) + 2
    R_all, p_all = head_poses(probe, np.arange(horizon) / rate)
    total = int(round(duration * rate))
    if moving:
        # the sampled head path, not the waypoint arc, has to cover distance_m
        covered = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p_all, axis=0), axis=1))])
        total = int(np.searchsorted(covered, spec.distance_m)) + 1

    def pose_at(frames):
        idx = np.asarray(frames, dtype=np.int64)
        return R_all[idx], p_all[idx]

    segments = []
    frame = 0
    prev_dir = None  # world direction at the end of the previous fixation
    min_fix = max(1, int(round(spec.min_fixation_s * rate)))
    while frame < total:
        for attempt in range(max_tries):
            lo, hi = spec.fixation_s
            if attempt >= max_tries // 2:
                # shorten fixations where the head turns quickly
                lo, hi = spec.min_fixation_s, max(spec.min_fixation_s, lo)
            nfix = max(min_fix, int(round(rng.uniform(lo, hi) * rate)))
            nsac = 0
            for _ in range(100):
                yaw, pitch = np.radians(rng.uniform(-1, 1, 2) * [spec.eye_yaw, spec.eye_pitch])
                eye = _unit(np.array([math.tan(yaw), math.tan(pitch), 1.0]))
                if prev_dir is None:
                    break
                # cheap pre-check: the jump must be wide enough for a fast saccade
                Rg, _ = pose_at([frame + 1])
                amp = float(_angle_deg(Rg[0] @ eye, prev_dir))
                if amp >= spec.min_saccade_deg:
                    nsac = max(1, int(math.floor(amp * rate / spec.saccade_speed)) - 1)
                    break
            else:
                continue
            start = frame + nsac
            Rs, ps = pose_at([start])
            world = Rs[0] @ eye
            t, tri = scene.cast(ps, world[None])
            if tri[0] < 0 or t[0] < spec.min_target_distance_m:
                continue
            target = ps[0] + t[0] * world
            Rf, pf = pose_at(np.arange(start, start + nfix))
            try:
                _check_target(scene, pf, target, len(segments))
            except (TargetNotVisible, ScriptError):
                continue
            d = _unit(target[None] - pf)
            cam = np.einsum("nji,nj->ni", Rf, d)
            if np.any(cam[:, 2] < math.cos(math.radians(spec.eye_yaw + spec.eye_pitch + 10))):
                continue
            # during fast head turns fall back to fixations the detector may miss
            head_rate = np.max(_angle_deg(Rf[1:, :, 2], Rf[:-1, :, 2])) * rate if nfix > 1 else 0.0
            relaxed = attempt >= 3 * max_tries // 4 or head_rate > 0.8 * spec.max_pursuit
            pursuit = spec.max_pursuit * (3 if relaxed else 1)
            if nfix > 1 and np.max(_angle_deg(cam[1:], cam[:-1])) * rate > pursuit:
                continue
            if prev_dir is not None:
                # the saccade frames themselves must stay in view and fast
                f = np.arange(0, nsac + 2) / (nsac + 1)
                sw = _slerp(prev_dir, d[0], f)
                Rq, _ = pose_at(np.arange(frame - 1, start + 1))
                sc = np.einsum("nji,nj->ni", Rq, sw)
                if np.any(sc[:, 2] < math.cos(math.radians(MAX_EYE_ANGLE - 20))):
                    continue
                if np.min(_angle_deg(sc[1:], sc[:-1])) * rate < spec.saccade_speed * 0.85:
                    continue
                segments.append(Saccade(nsac / rate))
            segments.append(Fixation(tuple(target), nfix / rate))
            prev_dir = d[-1]
            frame = start + nfix
            break
        else:
            raise ScriptError(f"could not place a fixation target near frame {frame}")

    blinks = []
    if spec.blink_rate_hz > 0:
        t_end = frame / rate
        nb = rng.poisson(spec.blink_rate_hz * t_end)
        for s in np.sort(rng.uniform(0, max(t_end - spec.blink_s, 0), nb)):
            blinks.append((float(s), spec.blink_s))
    return SimScript(scene, waypoints, tuple(segments), CalibrationParams.coerce(true_offset), mode,
                     noise_std_deg, tuple(blinks), rate, speed, False, int(seed))


def static_script(scene, targets, position=(0.0, 1.6, 0.0), look=(0.0, 1.6, 3.0), fixation_s=0.4,
                  saccade_s=0.04, **kw) -> SimScript:
    """Head held still while fixating each target in turn."""
    segs = []
    for i, tgt in enumerate(targets):
        if i:
            segs.append(Saccade(saccade_s))
        segs.append(Fixation(tuple(tgt), fixation_s))
    return SimScript(scene, (Waypoint(position, look),), tuple(segs), speed_mps=0.0, **kw)
