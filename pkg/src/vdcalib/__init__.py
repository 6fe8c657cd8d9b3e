"""Bayesian calibration of an 8-DOF vehicle handling model."""
from .params import VehicleParams
from .dynamics import (ControlSample, TireOutput, VehicleState, simulate, step)
from .driver import ControlSchedule
from .data import NoiseSpec, TimeSeries

__version__ = "0.1.0"

__all__ = ["VehicleParams", "VehicleState", "ControlSample", "TireOutput", "ControlSchedule",
           "TimeSeries", "NoiseSpec", "simulate", "step", "__version__"]
