"""File formats: traces, ground truth, scripts, scenes and run configs.

Traces are JSON lines, one sample per line::

    {"t": 0.02, "g": [u, v], "R": [r00, r01, ..., r22], "p": [x, y, z], "open": 1.0}

``R`` is the camera-to-world rotation, row-major; nested 3x3 lists are
also accepted on input.

Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact. Simulator ground truth goes to a ``.truth.json`` sidecar.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .calibration import OptimizerConfig
from .errors import ConfigError, DataError, TraceEmpty, TraceFormatError
from .eye_model import CalibrationParams
from .fixation import DetectorConfig
from .scene import SceneModel, room_scene
from .synth import Fixation, Saccade, SimScript, WalkSpec, Waypoint
from .trace import GroundTruth, Trace

BUILTIN_SCENES = {"room": room_scene}


# -- traces -----------------------------------------------------------------

def truth_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".truth.json")


def trace_lines(trace: Trace):
    for i in range(len(trace)):
        yield json.dumps({
            "t": float(trace.t[i]),
            "g": trace.g[i].tolist(),
            "R": trace.R[i].reshape(9).tolist(),
            "p": trace.p[i].tolist(),
            "open": float(trace.openness[i]),
        })


def save_trace(trace: Trace, path, with_truth=True) -> Path:
    path = Path(path)
    path.write_text("".join(line + "\n" for line in trace_lines(trace)))
    if with_truth and trace.truth is not None:
        truth_path(path).write_text(json.dumps(truth_to_dict(trace.truth), indent=1) + "\n")
    return path


def _vector(obj, key, shape, lineno):
    try:
        a = np.array(obj[key], dtype=float)
    except KeyError:
        raise TraceFormatError(f"missing field {key!r}", lineno) from None
    except (TypeError, ValueError):
        raise TraceFormatError(f"field {key!r} is not numeric", lineno) from None
    if a.shape != shape:
        raise TraceFormatError(f"field {key!r} has shape {a.shape}, expected {shape}", lineno)
    if not np.all(np.isfinite(a)):
        raise TraceFormatError(f"field {key!r} is not finite", lineno)
    return a


def parse_trace(text: str, truth=None) -> Trace:
    t, g, R, p, o = [], [], [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict):
            raise TraceFormatError("expected a JSON object", lineno)
        ts = float(_vector(obj, "t", (), lineno))
        if t and not ts > t[-1]:
            raise TraceFormatError("timestamps must be strictly increasing", lineno)
        op = float(_vector(obj, "open", (), lineno)) if "open" in obj else 1.0
        if not 0.0 <= op <= 1.0:
            raise TraceFormatError("openness must lie in [0, 1]", lineno)
        t.append(ts)
        g.append(_vector(obj, "g", (2,), lineno))
        r = np.array(obj.get("R", []), dtype=object)
        R.append(_vector(obj, "R", (3, 3) if r.ndim == 2 else (9,), lineno).reshape(3, 3))
        p.append(_vector(obj, "p", (3,), lineno))
        o.append(op)
    if not t:
        raise TraceEmpty("trace file has no samples")
    if truth is not None and truth.labels is not None and len(truth.labels) != len(t):
        raise DataError("ground-truth sidecar does not match the trace length")
    return Trace(np.array(t), np.array(g), np.array(R), np.array(p), np.array(o), truth)


def load_trace(path, with_truth=True) -> Trace:
    path = Path(path)
    truth = None
    if with_truth and truth_path(path).exists():
        truth = truth_from_dict(json.loads(truth_path(path).read_text()))
    return parse_trace(path.read_text(), truth)


def truth_to_dict(truth: GroundTruth):
    return {
        "true_offset": list(truth.true_offset),
        "mode": truth.mode,
        "labels": None if truth.labels is None else truth.labels.tolist(),
        "segments": list(truth.segments),
    }


def truth_from_dict(d) -> GroundTruth:
    try:
        return GroundTruth(tuple(d["true_offset"]), d.get("mode", "opt"), d.get("labels"),
                           d.get("segments", ()))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad ground-truth sidecar: {exc}") from None


# -- scenes -----------------------------------------------------------------

def load_scene(ref, base=None) -> SceneModel:
    """A builtin scene name (``"room"``) or a path to an OBJ file."""
    ref = str(ref)
    if ref in BUILTIN_SCENES:
        return BUILTIN_SCENES[ref]()
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    if not path.exists():
        raise DataError(f"scene {ref!r} is neither a builtin nor an existing file")
    return SceneModel.from_obj(path)


# -- scripts ----------------------------------------------------------------

def script_to_dict(script: SimScript):
    segs = []
    for s in script.segments:
        if s.kind == "fixation":
            segs.append({"kind": "fixation", "target": list(s.target), "duration": s.duration})
        else:
            segs.append({"kind": "saccade", "duration": s.duration})
    return {
        "scene": script.scene_ref,
        "waypoints": [{"position": list(w.position), "look_at": list(w.look_at)}
                      for w in script.waypoints],
        "segments": segs,
        "true_offset": list(script.true_offset),
        "mode": script.mode,
        "noise_std_deg": script.noise_std_deg,
        "blinks": [list(b) for b in script.blinks],
        "sampling_rate_hz": script.sampling_rate_hz,
        "speed_mps": script.speed_mps,
        "loop": script.loop,
        "seed": script.seed,
    }


def script_from_dict(d, base=None) -> SimScript:
    try:
        scene_ref = d.get("scene", "room")
        scene = load_scene(scene_ref, base)
        waypoints = [Waypoint(w["position"], w["look_at"]) for w in d["waypoints"]]
        segs = []
        for s in d["segments"]:
            if s["kind"] == "fixation":
                segs.append(Fixation(s["target"], float(s["duration"])))
            elif s["kind"] == "saccade":
                segs.append(Saccade(float(s["duration"])))
            else:
                raise DataError(f"unknown segment kind {s['kind']!r}")
        extra = {k: d[k] for k in ("mode", "noise_std_deg", "sampling_rate_hz", "speed_mps",
                                   "loop", "seed") if k in d}
        return SimScript(scene, waypoints, segs, tuple(d.get("true_offset", (0.0, 0.0))),
                         blinks=[tuple(b) for b in d.get("blinks", ())], scene_ref=str(scene_ref),
                         **extra)
    except (KeyError, TypeError) as exc:
        raise DataError(f"bad script: missing or malformed {exc}") from None


def save_script(script: SimScript, path):
    Path(path).write_text(json.dumps(script_to_dict(script), indent=1) + "\n")


def load_script(path) -> SimScript:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"invalid JSON ({exc.msg})", exc.lineno) from None
    return script_from_dict(d, path.parent)


# -- configs ----------------------------------------------------------------

SECTIONS = {
    "detector": DetectorConfig,
    "optimizer": OptimizerConfig,
    "walk": WalkSpec,
}


def _value(text):
    try:
        v = json.loads(text)
    except json.JSONDecodeError:
        return text
    if isinstance(v, list):
        return tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return v


# human-friendly detector keys and their conversions
DETECTOR_ALIASES = {
    "dispersion_deg": ("dispersion_threshold", lambda d: math.tan(math.radians(d)) ** 2),
    "dispersion_threshold_deg": ("dispersion_threshold", lambda d: math.tan(math.radians(d)) ** 2),
    "velocity_threshold": ("velocity_threshold_deg_per_s", float),
    "min_fixation_time_ms": ("min_fixation_time_s", lambda ms: ms / 1000.0),
}


def parse_config(text: str) -> dict:
    """Sectioned ``key = value`` text; ``#`` starts a comment.

    Keys before any section header go to ``run``. Values are read as JSON
    when possible (numbers, lists, booleans), otherwise kept as strings.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                       default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"config syntax: {exc.message if hasattr(exc, 'message') else exc}"
                          + ("" if line is None else f" (line {line - 1})")) from None
    out = {}
    for name in parser.sections():
        if name != "run" and name not in SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        fields = None if name == "run" else {f.name for f in dataclasses.fields(SECTIONS[name])}
        if name == "detector":
            fields.update(DETECTOR_ALIASES)
        sec = {}
        for key, raw in parser.items(name):
            if fields is not None and key not in fields:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            sec[key] = _value(raw)
        out[name] = sec
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} not found")
    return parse_config(path.read_text())


def build(section: str, config: dict, **overrides):
    """Instantiate the dataclass behind a config section."""
    kw = dict(config.get(section, {}))
    kw.update(overrides)
    if section == "detector":
        for alias, (name, convert) in DETECTOR_ALIASES.items():
            if alias in kw:
                kw[name] = convert(kw.pop(alias))
    try:
        return SECTIONS[section](**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def theta_arg(text) -> CalibrationParams:
    """Parse ``"a,b"`` into offset angles."""
    try:
        a, b = (float(x) for x in str(text).split(","))
    except ValueError:
        raise ConfigError(f"expected two comma-separated angles, got {text!r}") from None
    return CalibrationParams(a, b)
