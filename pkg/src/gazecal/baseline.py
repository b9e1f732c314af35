"""Marker-based calibration: first-order regression on a 5x5 marker grid.

This is the control condition that self-calibration is compared against.
Markers sit on a plane 1 m in front of the head, covering 20 degrees of
field of view, with the grid centre 5 degrees below the camera axis. The
outer ring of 16 markers is used to fit the map and the inner 3x3 block is
held out for evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDesign
from .eye_model import CalibrationParams, angular_error, calibrate, uncalibrate
from .synth import perturb

GRID = 5
FOV_DEG = 20.0
DROP_DEG = 5.0
SAMPLE_RATE_HZ = 50.0
GAZE_S = 3.0
KEEP_S = 1.0  # middle of each gaze period


def marker_grid() -> np.ndarray:
    """(25, 2) marker positions [u, v] on the z = 1 plane, row-major, +v down."""
    half = math.tan(math.radians(FOV_DEG / 2))
    steps = np.linspace(-half, half, GRID)
    v0 = math.tan(math.radians(DROP_DEG))
    return np.array([[u, v0 + v] for v in steps for u in steps])


def default_split():
    """(estimation, evaluation) marker indices: outer ring and inner 3x3."""
    ev = [r * GRID + c for r in range(1, GRID - 1) for c in range(1, GRID - 1)]
    est = [i for i in range(GRID * GRID) if i not in ev]
    return tuple(est), tuple(ev)


@dataclass(frozen=True)
class RegressionCoeffs:
    """u' = a1 + a2 u + a3 v and v' = b1 + b2 u + b3 v."""

    a: tuple
    b: tuple
    residual: float = 0.0  # RMS plane distance on the fit pairs

    def apply(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        a1, a2, a3 = self.a
        b1, b2, b3 = self.b
        return np.stack([a1 + a2 * u + a3 * v, b1 + b2 * u + b3 * v], axis=-1)

    def to_dict(self):
        return {"a": list(self.a), "b": list(self.b), "residual": self.residual}

    @classmethod
    def identity(cls):
        return cls((0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class MarkerSession:
    """Per-marker raw gaze samples for one marker calibration run."""

    markers: np.ndarray  # (25, 2) target [u, v]
    samples: tuple  # 25 arrays of raw [u, v], shape (k, 2)
    estimation: tuple = field(default_factory=lambda: default_split()[0])
    evaluation: tuple = field(default_factory=lambda: default_split()[1])

    def __post_init__(self):
        m = np.array(self.markers, dtype=float).reshape(-1, 2)
        m.setflags(write=False)
        object.__setattr__(self, "markers", m)
        samples = []
        for s in self.samples:
            s = np.array(s, dtype=float).reshape(-1, 2)
            s.setflags(write=False)
            samples.append(s)
        object.__setattr__(self, "samples", tuple(samples))
        object.__setattr__(self, "estimation", tuple(int(i) for i in self.estimation))
        object.__setattr__(self, "evaluation", tuple(int(i) for i in self.evaluation))
        if len(samples) != len(m):
            raise ValueError("need one sample array per marker")
        est, ev = set(self.estimation), set(self.evaluation)
        if est & ev:
            raise ValueError("estimation and evaluation markers overlap")
        if est | ev != set(range(len(m))):
            raise ValueError("estimation and evaluation markers must cover every marker")

    def pairs(self, which="estimation"):
        """(raw, target) arrays stacked over the chosen marker set."""
        idx = self.estimation if which == "estimation" else self.evaluation
        raw = np.concatenate([self.samples[i] for i in idx])
        tgt = np.concatenate([np.repeat(self.markers[i:i + 1], len(self.samples[i]), 0) for i in idx])
        return raw, tgt

    def to_dict(self):
        return {
            "markers": self.markers.tolist(),
            "samples": [s.tolist() for s in self.samples],
            "estimation": list(self.estimation),
            "evaluation": list(self.evaluation),
        }

    @classmethod
    def from_dict(cls, d):
        est, ev = default_split()
        return cls(d["markers"], d["samples"], d.get("estimation", est), d.get("evaluation", ev))


def _uv(g):
    g = np.asarray(g, dtype=float)
    if g.shape[-1] == 3:
        return g[..., :2] / g[..., 2:]
    return g


def fit_regression(pairs) -> RegressionCoeffs:
    """Least-squares first-order map from raw to target image coordinates.

    ``pairs`` is a sequence of ``(raw, target)`` directions, or a tuple of
    two stacked arrays. Minimizing squared image-plane distance at unit
    depth is the same as fitting u and v independently.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        raw, tgt = _uv(pairs[0]), _uv(pairs[1])
    else:
        pairs = list(pairs)
        raw = _uv(np.array([p[0] for p in pairs], dtype=float).reshape(len(pairs), -1))
        tgt = _uv(np.array([p[1] for p in pairs], dtype=float).reshape(len(pairs), -1))
    A = np.column_stack([np.ones(len(raw)), raw[:, 0], raw[:, 1]])
    if len(raw) < 3 or np.linalg.matrix_rank(A) < 3:
        raise DegenerateDesign("need at least three non-collinear raw gaze points")
    coef, *_ = np.linalg.lstsq(A, tgt, rcond=None)
    fit = A @ coef
    resid = float(np.sqrt(np.mean(np.sum((fit - tgt) ** 2, axis=1))))
    return RegressionCoeffs(tuple(coef[:, 0].tolist()), tuple(coef[:, 1].tolist()), resid)


def fit_session(session: MarkerSession) -> RegressionCoeffs:
    return fit_regression(session.pairs("estimation"))


def corrected(uv, model=None, mode="opt") -> np.ndarray:
    """Raw gaze mapped through a regression, an offset model, or nothing."""
    uv = np.asarray(uv, dtype=float)
    if model is None:
        return uv
    if isinstance(model, RegressionCoeffs):
        return model.apply(uv)
    return _uv(calibrate(uv, CalibrationParams.coerce(model), mode))


def evaluate_accuracy(model, session: MarkerSession, mode="opt") -> float:
    """Mean over evaluation markers of the mean angular error, in degrees.

    ``model`` is a :class:`RegressionCoeffs`, offset angles, or ``None`` for
    the raw gaze.
    """
    per_marker = []
    for i in session.evaluation:
        g = corrected(session.samples[i], model, mode)
        t = np.append(session.markers[i], 1.0)
        per_marker.append(float(np.mean(angular_error(np.column_stack([g, np.ones(len(g))]), t))))
    return float(np.mean(per_marker))


def offset_error(theta_hat, theta_true, mode="opt") -> float:
    """Degrees of gaze error left on the evaluation markers by an estimate.

    Noise-free marker gaze is generated with ``theta_true`` and corrected
    with ``theta_hat``.
    """
    m = marker_grid()[list(default_split()[1])]
    g = np.column_stack([m, np.ones(len(m))])
    raw = uncalibrate(g, CalibrationParams.coerce(theta_true), mode)
    fixed = calibrate(raw, CalibrationParams.coerce(theta_hat), mode)
    return float(np.mean(angular_error(fixed, g)))


def synthetic_session(distortion=None, noise_std_deg=0.0, seed=0, offset=None, mode="opt",
                      samples_per_marker=None) -> MarkerSession:
    """Marker session whose raw gaze is a known distortion of the targets.

    ``distortion`` is a :class:`RegressionCoeffs` mapping targets to raw
    gaze (identity if omitted); ``offset`` additionally applies an eye-model
    offset. Each marker gets the middle second of a three second gaze.
    """
    n = samples_per_marker or int(round(KEEP_S * SAMPLE_RATE_HZ))
    rng = np.random.default_rng(seed)
    markers = marker_grid()
    samples = []
    for m in markers:
        uv = m if distortion is None else distortion.apply(m)
        g = np.append(uv, 1.0)
        if offset is not None:
            g = uncalibrate(g, CalibrationParams.coerce(offset), mode)
        d = np.repeat(g[None, :] / np.linalg.norm(g), n, 0)
        d = perturb(d, noise_std_deg, rng.standard_normal((n, 2)))
        samples.append(d[:, :2] / d[:, 2:])
    return MarkerSession(markers, samples)
