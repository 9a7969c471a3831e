"""Flow-parameter forecasting from low-penetration connected-vehicle data."""

from .errors import CvForecastError
from .filters import FilterParams, apply_filter, fit_noise_params, kalman_forward, rts_smooth
from .flowparams import TimeSeries, aggregate, noise_series
from .predictors import Hyperparams, RnnModel, predict_series, prepare_supervised, train_rnn
from .trajectory import SyntheticConfig, TrajectoryDataset, generate_synthetic, parse_trajectory_file

__version__ = "0.1.0"

__all__ = [
    "CvForecastError",
    "FilterParams",
    "Hyperparams",
    "RnnModel",
    "SyntheticConfig",
    "TimeSeries",
    "TrajectoryDataset",
    "aggregate",
    "apply_filter",
    "fit_noise_params",
    "generate_synthetic",
    "kalman_forward",
    "noise_series",
    "parse_trajectory_file",
    "predict_series",
    "prepare_supervised",
    "rts_smooth",
    "train_rnn",
]
