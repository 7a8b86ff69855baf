"""Predictive virtual sensor identification and NMPC for a simulated two-link arm."""
from .errors import (ConfigError, ModelFormatError, NotWarmedUpError, NumericError, OutOfWorkspaceError,
                     PvsidError, TrainingFailure, ValidationError)
from .identification import PvsidModel, TrainConfig, estimate_state, kstep_mse, make_windows, predict_future, train
from .kinematics import ArmGeometry, forward_kinematics, inverse_kinematics
from .nmpc import NmpcConfig, mpc_step, run_closed_loop
from .plant import PlantParams, PlantState, plant_step, simulate_log

__version__ = "0.1.0"

__all__ = [
    "ArmGeometry", "ConfigError", "ModelFormatError", "NmpcConfig", "NotWarmedUpError", "NumericError",
    "OutOfWorkspaceError", "PlantParams", "PlantState", "PvsidError", "PvsidModel", "TrainConfig",
    "TrainingFailure", "ValidationError", "estimate_state", "forward_kinematics", "inverse_kinematics",
    "kstep_mse", "make_windows", "mpc_step", "plant_step", "predict_future", "run_closed_loop",
    "simulate_log", "train",
]
