"""Offset-angle self-calibration for head-mounted eye trackers.

Fixations detected during free walking in a known 3D scene constrain the
angle between the optical and visual axes: with the right offset, the gaze
rays of one fixation meet at a single surface point.
"""

from .baseline import MarkerSession, RegressionCoeffs, evaluate_accuracy, fit_regression
from .calibration import (CalibrationResult, OptimizerConfig, cluster_cost, grid_scan, optimize,
                          self_calibrate, total_cost)
from .errors import DataError, GazecalError
from .eye_model import CalibrationParams, angular_error, apply_offset, calibrate, remove_offset
from .fixation import Algo, DetectorConfig, FixationCluster, detect_fixations
from .geometry import HeadPose, inverse_project, project
from .scene import SceneModel, room_scene
from .synth import SimScript, WalkSpec, random_script, simulate
from .trace import GazeSample, Trace, cumulative_distance

__all__ = [
    "MarkerSession", "RegressionCoeffs", "evaluate_accuracy", "fit_regression", "CalibrationResult",
    "OptimizerConfig", "cluster_cost", "grid_scan", "optimize", "self_calibrate", "total_cost",
    "DataError", "GazecalError",
    "CalibrationParams", "angular_error", "apply_offset", "calibrate", "remove_offset", "Algo",
    "DetectorConfig", "FixationCluster", "detect_fixations", "HeadPose", "inverse_project",
    "project", "SceneModel", "room_scene", "SimScript", "WalkSpec", "random_script", "simulate",
    "GazeSample", "Trace", "cumulative_distance",
]

__version__ = "0.1.0"
