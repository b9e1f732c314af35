"""Two-angle eye model mapping between optical and visual axes.

Angles are degrees at the API boundary. Directions are homogeneous image
coordinates ``[u, v, 1]`` on the focal-length-1 plane of the scene camera;
every function here accepts a single direction of shape ``(3,)`` or a stack of
shape ``(..., 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DegenerateDirection, ZeroVector

MIN_DEPTH = 1e-12
MODES = ("opt", "vis")


@dataclass(frozen=True)
class CalibrationParams:
    """Horizontal (``alpha``) and vertical (``beta``) offset angles in degrees."""

    alpha: float = 0.0
    beta: float = 0.0

    def __iter__(self) -> Iterator[float]:
        yield self.alpha
        yield self.beta

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=float)

    @classmethod
    def coerce(cls, theta) -> "CalibrationParams":
        if isinstance(theta, cls):
            return theta
        a, b = (float(x) for x in theta)
        return cls(a, b)


def offset_matrix(theta) -> np.ndarray:
    """Rotation ``Rx(beta) @ Ry(alpha)`` taking optical to visual axis.

    Entries are written out element by element, including the
    placement of the negative sines; a sign flip here mirrors the recovered
    offset, so tests pin every entry.
    """
    alpha, beta = np.radians(CalibrationParams.coerce(theta).as_array())
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    rx = np.array([[1.0, 0.0, 0.0],
                   [0.0, cb, sb],
                   [0.0, -sb, cb]])
    ry = np.array([[ca, 0.0, sa],
                   [0.0, 1.0, 0.0],
                   [-sa, 0.0, ca]])
    return rx @ ry


def homogeneous(g) -> np.ndarray:
    """Rescale direction(s) so the third component is exactly 1."""
    g = np.asarray(g, dtype=float)
    z = g[..., 2:3]
    if np.any(~(z > MIN_DEPTH)):
        raise DegenerateDirection("direction is at or beyond 90 degrees off-axis")
    out = g / z
    out[..., 2] = 1.0
    return out


def as_direction(uv) -> np.ndarray:
    """``[u, v]`` (or already homogeneous) -> ``[u, v, 1]``."""
    uv = np.asarray(uv, dtype=float)
    if uv.shape[-1] == 3:
        return uv
    return np.concatenate([uv, np.ones(uv.shape[:-1] + (1,))], axis=-1)


def _rotate(g, mat) -> np.ndarray:
    g = as_direction(g)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gaze direction")
    return homogeneous(g @ mat.T)


def apply_offset(g_opt, theta) -> np.ndarray:
    """Optical axis -> visual axis (or any axis calibrated by ``theta``)."""
    return _rotate(g_opt, offset_matrix(theta))


def remove_offset(g_vis, theta) -> np.ndarray:
    """Exact inverse of :func:`apply_offset`."""
    return _rotate(g_vis, offset_matrix(theta).T)


def calibrate(g_raw, theta, mode: str = "opt") -> np.ndarray:
    """Calibrated gaze for a tracker stream of the given role.

    ``"opt"`` streams are optical-axis-like and are rotated forward by
    ``theta``; ``"vis"`` streams are visual-axis-like and are rotated back
    (``theta == [0, 0]`` then means "use the stream as is").
    """
    if mode == "opt":
        return apply_offset(g_raw, theta)
    if mode == "vis":
        return remove_offset(g_raw, theta)
    raise ValueError(f"unknown gaze mode {mode!r}")


def uncalibrate(g, theta, mode: str = "opt") -> np.ndarray:
    """Inverse of :func:`calibrate`: what the tracker reports for true gaze ``g``."""
    if mode == "opt":
        return remove_offset(g, theta)
    if mode == "vis":
        return apply_offset(g, theta)
    raise ValueError(f"unknown gaze mode {mode!r}")


def angular_error(g_a, g_b) -> np.ndarray | float:
    """Angle between directions in degrees, in ``[0, 180]``."""
    a = np.asarray(g_a, dtype=float)
    b = np.asarray(g_b, dtype=float)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ZeroVector("angular error of a zero vector")
    # atan2 form keeps precision near 0 and 180 degrees
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    out = np.degrees(np.arctan2(cross, dot))
    return float(out) if np.ndim(out) == 0 else out
