"""Meter-level electricity load forecasting on a from-scratch autodiff kernel.

Three architectures (Transformer encoder-decoder, LSTM, vanilla RNN) predict
a household's next half-hour consumption from its last n readings, trained
and benchmarked by a seeded, reproducible experiment grid.
"""

from .autodiff import Graph, Tensor
from .config import ExperimentConfig, GridConfig, load_config, PAPER_HOUSES
from .data import (
    MeterReading,
    MeterSeries,
    MinMaxScaler,
    WindowedDataset,
    fit_apply_scaler,
    make_windows,
    parse_readings,
    split_train_test,
    synthetic_household_series,
    windows_from_values,
)
from .errors import LoadcastError
from .evaluation import ForecastTrace, MapeResult, SummaryRow, mape, summarize
from .gradcheck import check_gradients
from .models import (
    MODEL_KINDS,
    MODEL_LABELS,
    LSTMForecaster,
    RecurrentSpec,
    RNNForecaster,
    TransformerForecaster,
    TransformerSpec,
    build_forecaster,
)
from .rng import derive_seed, make_rng
from .training import (
    ExperimentResult,
    TrainSpec,
    execute_run,
    mse_loss,
    run_grid,
    run_single,
    train_model,
)

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "Tensor",
    "ExperimentConfig",
    "GridConfig",
    "load_config",
    "PAPER_HOUSES",
    "MeterReading",
    "MeterSeries",
    "MinMaxScaler",
    "WindowedDataset",
    "fit_apply_scaler",
    "make_windows",
    "parse_readings",
    "split_train_test",
    "synthetic_household_series",
    "windows_from_values",
    "LoadcastError",
    "ForecastTrace",
    "MapeResult",
    "SummaryRow",
    "mape",
    "summarize",
    "check_gradients",
    "MODEL_KINDS",
    "MODEL_LABELS",
    "LSTMForecaster",
    "RecurrentSpec",
    "RNNForecaster",
    "TransformerForecaster",
    "TransformerSpec",
    "build_forecaster",
    "derive_seed",
    "make_rng",
    "ExperimentResult",
    "TrainSpec",
    "execute_run",
    "mse_loss",
    "run_grid",
    "run_single",
    "train_model",
    "__version__",
]
