"""Multi-step-ahead PM2.5 forecasting with hand-written LSTM models."""

__version__ = "0.1.0"

from .errors import AqcastError
from .harness import (
    ExperimentSummary,
    ForecastResult,
    HorizonMetrics,
    confidence_interval,
    forecast_with_uncertainty,
    horizon_rmse,
    prepare_data,
    recursive_forecast,
    rmse,
    run_trials,
)
from .models import ModelSpec, TrainedModel, TrainingConfig, build_model, predict_batch, train
from .station_data import (
    TimeSeriesFrame,
    impute_neighbor_median,
    minmax_apply,
    minmax_fit,
    minmax_invert,
    parse_station_csv,
    pearson_matrix,
    period_stats,
    seasonal_slice,
)
from .windowing import (
    SplitSpec,
    WindowedDataset,
    build_windows,
    chronological_split,
    halve_for_validation,
    shuffle_windows,
)
