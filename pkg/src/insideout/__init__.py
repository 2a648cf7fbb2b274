"""Rigid-transform, hand-eye and C-arm calibration toolkit with TRE and bull's-eye checks."""

from .chain import CalibrationState, FramePoses, calibrate, principal_ray, surgeon_T_carm, surgeon_T_volume
from .evaluation import (
    BullseyeUnreachableError,
    GantryParameterization,
    ObservationGridError,
    Phantom,
    Tube,
    align_to_bullseye,
    check_bullseye,
    compute_tre,
    simulate_gaze,
)
from .geometry import Line3, RigidTransform, Rotation, compose, inverse
from .handeye import DegenerateMotionError, HandEyeError, HandEyeSolution, InsufficientDataError, solve
from .trajectory import NoiseSpec, OrbitSpec, PoseStream, generate_orbit, relative_pairs, simulate_tracker

__version__ = "0.1.0"

__all__ = [
    "BullseyeUnreachableError",
    "CalibrationState",
    "DegenerateMotionError",
    "FramePoses",
    "GantryParameterization",
    "HandEyeError",
    "HandEyeSolution",
    "InsufficientDataError",
    "Line3",
    "NoiseSpec",
    "ObservationGridError",
    "OrbitSpec",
    "Phantom",
    "PoseStream",
    "RigidTransform",
    "Rotation",
    "Tube",
    "align_to_bullseye",
    "calibrate",
    "check_bullseye",
    "compose",
    "compute_tre",
    "generate_orbit",
    "inverse",
    "principal_ray",
    "relative_pairs",
    "simulate_gaze",
    "simulate_tracker",
    "solve",
    "surgeon_T_carm",
    "surgeon_T_volume",
]
