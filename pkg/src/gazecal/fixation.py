"""Moving-window fixation detection: I-VT, 3D I-DT and 3D I-VDT.

The 3D dispersion test casts each calibrated gaze ray into the scene,
projects the points of regard onto a "center camera" chosen from the
window, and bounds their spread on that image plane. With a fixed head
and a single plane this reduces to the classic image-space I-DT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .errors import TraceTooShort
from .eye_model import CalibrationParams, as_direction, calibrate
from .trace import as_trace


class Algo(str, Enum):
    IVT = "IVT"
    IDT3D = "IDT3D"
    IVDT3D = "IVDT3D"

    @classmethod
    def parse(cls, value) -> "Algo":
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "").replace("_", "")
        for a in cls:
            if a.value == key:
                return a
        raise ValueError(f"unknown detector {value!r}; expected one of IVT, IDT3D, IVDT3D")


@dataclass(frozen=True)
class DetectorConfig:
    velocity_threshold_deg_per_s: float = 80.0
    dispersion_threshold: float = math.tan(math.radians(0.7)) ** 2
    min_fixation_time_s: float = 0.16
    sampling_rate_hz: float = 50.0
    openness_cutoff: float = 0.5
    # per-frame angle override in degrees; None derives it from velocity / rate
    phi_th_deg: float | None = None

    def __post_init__(self):
        for name in ("velocity_threshold_deg_per_s", "dispersion_threshold",
                     "min_fixation_time_s", "sampling_rate_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.openness_cutoff <= 1:
            raise ValueError("openness_cutoff must lie in [0, 1]")
        if self.phi_th_deg is not None and not self.phi_th_deg > 0:
            raise ValueError("phi_th_deg must be positive")
        if self.window_size < 2:
            raise ValueError("window size m = round(rate * min time) must be at least 2")

    @classmethod
    def from_degrees(cls, dispersion_deg=0.7, **kw) -> "DetectorConfig":
        return cls(dispersion_threshold=math.tan(math.radians(dispersion_deg)) ** 2, **kw)

    @property
    def window_size(self) -> int:
        return int(round(self.sampling_rate_hz * self.min_fixation_time_s))

    @property
    def phi_th(self) -> float:
        """Per-frame angle threshold in degrees."""
        if self.phi_th_deg is not None:
            return float(self.phi_th_deg)
        return self.velocity_threshold_deg_per_s / self.sampling_rate_hz

    @property
    def dispersion_deg(self) -> float:
        return math.degrees(math.atan(math.sqrt(self.dispersion_threshold)))

    @property
    def max_gap_s(self) -> float:
        return 2.0 / self.sampling_rate_hz


@dataclass(frozen=True, eq=False)
class FixationCluster:
    """Frames of one fixation (source-trace indices) and its center camera."""

    frame_indices: np.ndarray
    center_index: int

    def __post_init__(self):
        idx = np.array(self.frame_indices, dtype=np.int64).reshape(-1)
        idx.setflags(write=False)
        object.__setattr__(self, "frame_indices", idx)
        object.__setattr__(self, "center_index", int(self.center_index))
        if self.center_index not in set(idx.tolist()):
            raise ValueError("center_index must be one of the cluster frames")

    @property
    def size(self) -> int:
        return len(self.frame_indices)

    @property
    def start(self) -> int:
        return int(self.frame_indices[0])

    @property
    def stop(self) -> int:
        return int(self.frame_indices[-1]) + 1

    def __eq__(self, other):
        if not isinstance(other, FixationCluster):
            return NotImplemented
        return (self.center_index == other.center_index
                and np.array_equal(self.frame_indices, other.frame_indices))

    def __hash__(self):
        return hash((self.center_index, self.frame_indices.tobytes()))

    def __repr__(self):
        return f"FixationCluster({self.start}..{self.stop - 1}, center={self.center_index})"

    def to_dict(self):
        return {"frames": self.frame_indices.tolist(), "center": self.center_index}


def filter_blinks(samples, cutoff=0.5):
    """Drop frames with openness strictly below ``cutoff``.

    Returns ``(trace, index)``, where ``index`` maps each survivor back to
    its position in the input.
    """
    trace = as_trace(samples)
    keep = np.flatnonzero(trace.openness >= cutoff)
    return trace.take(keep), keep


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _calibrated(trace, theta, mode):
    return calibrate(as_direction(trace.g), CalibrationParams.coerce(theta), mode)


def ivt_condition(window, cfg: DetectorConfig = DetectorConfig(), theta=(0.0, 0.0), mode="opt") -> bool:
    """Every consecutive pair moves by strictly less than the per-frame angle."""
    w = as_trace(window)
    if len(w) < 2:
        raise ValueError("I-VT needs at least two frames")
    g = _unit(_calibrated(w, theta, mode))
    cos_pair = np.sum(g[1:] * g[:-1], axis=1)
    return bool(np.all(cos_pair > math.cos(math.radians(cfg.phi_th))))


def select_center_camera(window, theta=(0.0, 0.0), mode="opt") -> int:
    """Window-local index of the frame whose world gaze is nearest the mean."""
    w = as_trace(window)
    if len(w) == 0:
        raise ValueError("empty window")
    gw = _unit(np.einsum("nij,nj->ni", w.R, _unit(_calibrated(w, theta, mode))))
    d = np.linalg.norm(gw - gw.mean(axis=0), axis=1)
    return int(np.argmin(d))  # argmin returns the first of equal minima


def reprojected_points(window, scene, theta=(0.0, 0.0), mode="opt", center=None):
    """Points of regard projected onto the center camera, or ``None`` on a miss.

    Returns ``(x, center)`` with ``x`` of shape (n, 2); ``x`` is ``None`` if a
    ray misses or a point falls behind the center camera.
    """
    w = as_trace(window)
    g = _calibrated(w, theta, mode)
    d = np.einsum("nij,nj->ni", w.R, g)
    t, tri = scene.cast(w.p, d)
    if center is None:
        center = select_center_camera(w, theta, mode)
    if np.any(tri < 0):
        return None, center
    hits = w.p + t[:, None] * d
    q = (hits - w.p[center]) @ w.R[center]
    if np.any(q[:, 2] <= 0):
        return None, center
    return q[:, :2] / q[:, 2:], center


def idt3d_condition(window, scene, theta=(0.0, 0.0), cfg: DetectorConfig = DetectorConfig(),
                    mode="opt") -> bool:
    """All rays hit and the largest squared reprojected deviation is below D_th."""
    x, _ = reprojected_points(window, scene, theta, mode)
    if x is None:
        return False
    dev = np.sum((x - x.mean(axis=0)) ** 2, axis=1)
    return bool(dev.max() < cfg.dispersion_threshold)


def _frame_arrays(trace, scene, theta, mode, need_rays):
    g = _calibrated(trace, theta, mode)
    gu = _unit(g)
    cos_pair = np.ones(len(trace))
    cos_pair[1:] = np.sum(gu[1:] * gu[:-1], axis=1)
    d = np.einsum("nij,nj->ni", trace.R, g)
    wdir = _unit(d)
    if need_rays:
        t, tri = scene.cast(trace.p, d)
        hit_ok = tri >= 0
        hits = trace.p + np.where(hit_ok, t, 0.0)[:, None] * d
    else:
        hit_ok = np.ones(len(trace), dtype=bool)
        hits = np.zeros((len(trace), 3))
    return cos_pair, hit_ok, np.ascontiguousarray(wdir), np.ascontiguousarray(hits)


def detect_fixations(samples, algo="IVDT3D", scene=None, theta=(0.0, 0.0),
                     cfg: DetectorConfig = DetectorConfig(), mode="opt"):
    """Fixation clusters of a trace, indexed into the unfiltered input.

    Blink frames are removed first. Windows that straddle a timestamp gap of
    more than ``2 / sampling_rate`` fail outright. Within the filtered trace
    each cluster is a contiguous run of at least ``cfg.window_size`` frames.
    """
    algo = Algo.parse(algo)
    trace, keep = filter_blinks(samples, cfg.openness_cutoff)
    m = cfg.window_size
    if len(trace) < m:
        raise TraceTooShort(f"{len(trace)} usable frames, window needs {m}")
    use_idt = algo in (Algo.IDT3D, Algo.IVDT3D)
    use_ivt = algo in (Algo.IVT, Algo.IVDT3D)
    if use_idt and scene is None:
        raise ValueError(f"{algo.value} needs a scene")
    cos_pair, hit_ok, wdir, hits = _frame_arrays(trace, scene, theta, mode, use_idt)
    starts, stops, centers, count = _kernels.scan_windows(
        m, np.ascontiguousarray(trace.t), cfg.max_gap_s * (1 + 1e-9), cos_pair,
        math.cos(math.radians(cfg.phi_th)), use_ivt, hit_ok, wdir, hits,
        np.ascontiguousarray(trace.R), np.ascontiguousarray(trace.p),
        cfg.dispersion_threshold, use_idt)
    return [FixationCluster(keep[starts[i]:stops[i]], keep[centers[i]]) for i in range(count)]


def coverage(clusters) -> set:
    """Set of source frames labeled as fixation."""
    out = set()
    for c in clusters:
        out.update(c.frame_indices.tolist())
    return out
