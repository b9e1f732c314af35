"""Gaze traces: timestamped tracker samples with head poses.

A :class:`Trace` stores the samples column-wise so the detectors and the
cost kernels can work on contiguous arrays; :class:`GazeSample` is the
row view used at API edges and in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .eye_model import MODES, CalibrationParams
from .geometry import HeadPose


class GazeSample(NamedTuple):
    timestamp: float
    g_raw: np.ndarray  # [u, v]
    pose: HeadPose
    openness: float = 1.0


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroundTruth:
    """Simulator annotations carried alongside a trace."""

    true_offset: CalibrationParams
    mode: str = "opt"
    labels: np.ndarray | None = None  # segment index per frame
    segments: tuple = ()  # dicts: kind, start, stop, target

    def __post_init__(self):
        object.__setattr__(self, "true_offset", CalibrationParams.coerce(self.true_offset))
        if self.mode not in MODES:
            raise ValueError(f"unknown gaze mode {self.mode!r}")
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "segments", tuple(self.segments))

    def fixation_ranges(self):
        """``(start, stop)`` frame ranges (stop exclusive) of fixation segments."""
        return [(s["start"], s["stop"]) for s in self.segments if s["kind"] == "fixation"]


@dataclass(frozen=True, eq=False)
class Trace:
    """Column-wise gaze trace.

    ``t`` (n,), ``g`` (n, 2) raw image-plane gaze, ``R`` (n, 3, 3)
    camera-to-world rotations, ``p`` (n, 3) camera positions, ``openness`` (n,).
    """

    t: np.ndarray
    g: np.ndarray
    R: np.ndarray
    p: np.ndarray
    openness: np.ndarray
    truth: GroundTruth | None = field(default=None)

    def __post_init__(self):
        t = _frozen(self.t).reshape(-1)
        n = len(t)
        g = _frozen(self.g).reshape(n, 2)
        r = _frozen(self.R).reshape(n, 3, 3)
        p = _frozen(self.p).reshape(n, 3)
        o = _frozen(self.openness).reshape(n)
        if n > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any((o < 0) | (o > 1)):
            raise ValueError("openness must lie in [0, 1]")
        for name, a in (("t", t), ("g", g), ("R", r), ("p", p)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite values in {name}")
        for name, a in (("t", t), ("g", g), ("R", r), ("p", p), ("openness", o)):
            object.__setattr__(self, name, a)
        if self.truth is not None and self.truth.labels is not None and len(self.truth.labels) != n:
            raise ValueError("ground-truth labels must cover every frame exactly once")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> GazeSample:
        i = range(len(self))[i]
        return GazeSample(float(self.t[i]), self.g[i].copy(),
                          HeadPose(self.R[i], self.p[i]), float(self.openness[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_samples(cls, samples: Sequence[GazeSample], truth=None) -> "Trace":
        samples = list(samples)
        if not samples:
            return cls(np.empty(0), np.empty((0, 2)), np.empty((0, 3, 3)), np.empty((0, 3)),
                       np.empty(0), truth)
        return cls(
            [s.timestamp for s in samples],
            [np.asarray(s.g_raw, dtype=float)[:2] for s in samples],
            [s.pose.rotation for s in samples],
            [s.pose.translation for s in samples],
            [s.openness for s in samples],
            truth,
        )

    def take(self, idx) -> "Trace":
        """Sub-trace of the given frames (ground truth is dropped)."""
        idx = np.asarray(idx, dtype=np.int64)
        return Trace(self.t[idx], self.g[idx], self.R[idx], self.p[idx], self.openness[idx])

    def prefix(self, n) -> "Trace":
        """First ``n`` frames, keeping the matching slice of the ground truth."""
        truth = self.truth
        if truth is not None:
            labels = None if truth.labels is None else truth.labels[:n]
            segs = [dict(s, stop=min(s["stop"], n)) for s in truth.segments if s["start"] < n]
            truth = GroundTruth(truth.true_offset, truth.mode, labels, segs)
        return Trace(self.t[:n], self.g[:n], self.R[:n], self.p[:n], self.openness[:n], truth)


def as_trace(samples) -> Trace:
    if isinstance(samples, Trace):
        return samples
    return Trace.from_samples(samples)


def cumulative_distance(samples, upto_frame=None) -> float:
    """Summed head translation between adjacent frames ``0..upto_frame``."""
    p = as_trace(samples).p
    if upto_frame is None:
        upto_frame = len(p) - 1
    if not 0 <= upto_frame < max(len(p), 1):
        raise IndexError("upto_frame out of range")
    steps = np.linalg.norm(np.diff(p[: upto_frame + 1], axis=0), axis=1)
    return float(steps.sum())


def distance_profile(samples) -> np.ndarray:
    """Cumulative distance at every frame (starts at 0)."""
    p = as_trace(samples).p
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1))])
