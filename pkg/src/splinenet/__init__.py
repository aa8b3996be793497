"""Neural-network layers on piecewise-polynomial splines for irregular time series."""

__version__ = "0.1.0"

from .errors import SplineNetError
from .model import SplineNetConfig, TrainSettings, evaluate, init_params, load_checkpoint, save_checkpoint, train
from .spline import Spline, TimeSeries, fit

__all__ = [
    "Spline",
    "SplineNetConfig",
    "SplineNetError",
    "TimeSeries",
    "TrainSettings",
    "evaluate",
    "fit",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
