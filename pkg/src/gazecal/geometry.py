"""Pinhole scene camera with focal length 1.

Camera frame: +x right, +y down, +z forward (right-handed). World frame is
right-handed with +y up. ``HeadPose.rotation`` maps camera to world
coordinates and ``HeadPose.translation`` is the camera origin in the world.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PointBehindCamera
from .eye_model import as_direction, homogeneous

WORLD_UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class HeadPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, translation=(0.0, 0.0, 0.0)):
        return cls(np.eye(3), translation)

    def is_orthonormal(self, tol=1e-9) -> bool:
        r = self.rotation
        return bool(np.all(np.abs(r.T @ r - np.eye(3)) <= tol) and np.linalg.det(r) > 0)


def rotation_about(axis, angle_deg) -> np.ndarray:
    """Right-handed rotation matrix about ``axis`` (Rodrigues)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    a = np.radians(angle_deg)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(a) * k + (1.0 - np.cos(a)) * (k @ k)


def look_at(position, target, up=WORLD_UP) -> np.ndarray:
    """Camera-to-world rotation(s) for a camera at ``position`` facing ``target``.

    Vectorised over leading dimensions.
    """
    fwd = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    fwd = fwd / np.linalg.norm(fwd, axis=-1, keepdims=True)
    right = np.cross(fwd, up)
    n = np.linalg.norm(right, axis=-1, keepdims=True)
    if np.any(n < 1e-9):
        raise ValueError("look direction is parallel to the up vector")
    right = right / n
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=-1)


def project(camera: HeadPose, point) -> np.ndarray:
    """World point(s) -> homogeneous image coordinates ``[u, v, 1]``."""
    q = (np.asarray(point, dtype=float) - camera.translation) @ camera.rotation
    if np.any(~(q[..., 2] > 0)):
        raise PointBehindCamera("point has non-positive depth in the camera frame")
    return homogeneous(q)


def ray_direction(camera: HeadPose, g) -> np.ndarray:
    """World-frame direction of the ray through image point ``g``."""
    return as_direction(g) @ camera.rotation.T


def inverse_project(camera: HeadPose, g, scene):
    """First surface point hit by the ray through ``g``, or ``None`` on a miss."""
    g = as_direction(g)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gaze direction")
    d = ray_direction(camera, g)
    t, tri = scene.cast(camera.translation[None], d[None])
    if tri[0] < 0:
        return None
    return camera.translation + t[0] * d
