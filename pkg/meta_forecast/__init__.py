#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Zero-shot time-series forecasting with a meta-learned ridge output layer.

A single global network (an LSTM, a feed-forward net or a linear map) turns
lagged, rescaled observations of a series into a d-dimensional representation
at every time step. Instead of a global output head, each series gets its own
linear output weights, obtained in closed form by ridge regression of the
series' context observations on their representations. The only learned
parameter of that layer is the ridge regularizer. Because the ridge solution
is differentiable, the network and the regularizer are trained end to end on
a large source dataset, and the trained model can then forecast series from
an unrelated target dataset without any retraining: each target series simply
gets its own ridge fit at prediction time.

Forecasts are produced by rolling out the network over the horizon, feeding
each forecast back as the lag-1 covariate of the next step.

Everything the training loop differentiates runs on a small reverse-mode
autodiff tape over numpy arrays (see meta_forecast.autodiff), so the package
needs no deep-learning framework.

Typical use:

import numpy as np
from meta_forecast import (
    TrainConfig, kind_to_frequency, toy_meta_dataset, train, forecast_series, smape_metric
  )

monthly = kind_to_frequency['monthly']
source, target = toy_meta_dataset(seed=1, source_count=200, target_count=50)

config = TrainConfig(num_steps=300, minibatch_size=32, rep_dim=16, seed_init=0, seed_batch=0)
result = train(source, config, monthly)

forecasts = np.stack([forecast_series(s, result.params, 18) for s in target])
targets = np.stack([s.values[-18:] for s in target])
print(smape_metric(forecasts, targets))

The same workflow is available from the command line as
"meta-forecast train", "meta-forecast forecast" and "meta-forecast evaluate".
"""

from .version import __version__

from .typehints import Jsonable, JsonableDict, FloatArray
from .exceptions import MetaForecastError, ConfigError, DataError, NumericError, ShapeError
from .frequency import Frequency, kind_to_frequency, parse_frequency, recommended_targets
from .config import CovariateConfig, SearchSpace, TrainConfig, RunConfig, DEFAULT_SEARCH_SPACE
from .dataset import (
    TimeSeries,
    DatasetMetadata,
    ForecastTask,
    load_dataset,
    save_dataset,
    load_metadata,
    split_train_test,
    compute_scale,
    make_covariates,
  )
from .autodiff import Tape, Value, grad_check
from .backbone import Backbone, make_backbone
from .params import ModelSpec, GlobalParams, average_params
from .model import (
    fit_local,
    solve_local_weights,
    forecast,
    forecast_global_head,
    adapt_at_prediction_only,
    predict,
    forecast_series,
  )
from .training import train, TrainResult, TrainLog, smape_loss, adam_step, pipeline_grad_check
from .evaluation import (
    ForecastSet,
    MetricReport,
    smape_metric,
    nd_metric,
    mape_metric,
    aggregate,
    ensemble_median,
    report,
    write_forecasts,
    read_forecasts,
  )
from .search import random_search, ablation_grid, ablation_label, TrialResult
from .synthetic import synthetic_dataset, toy_meta_dataset
from .manifest import RunManifest

__all__ = [
    "Jsonable",
    "JsonableDict",
    "FloatArray",
    "MetaForecastError",
    "ConfigError",
    "DataError",
    "NumericError",
    "ShapeError",
    "Frequency",
    "kind_to_frequency",
    "parse_frequency",
    "recommended_targets",
    "CovariateConfig",
    "SearchSpace",
    "TrainConfig",
    "RunConfig",
    "DEFAULT_SEARCH_SPACE",
    "TimeSeries",
    "DatasetMetadata",
    "ForecastTask",
    "load_dataset",
    "save_dataset",
    "load_metadata",
    "split_train_test",
    "compute_scale",
    "make_covariates",
    "Tape",
    "Value",
    "grad_check",
    "Backbone",
    "make_backbone",
    "ModelSpec",
    "GlobalParams",
    "average_params",
    "fit_local",
    "solve_local_weights",
    "forecast",
    "forecast_global_head",
    "adapt_at_prediction_only",
    "predict",
    "forecast_series",
    "train",
    "TrainResult",
    "TrainLog",
    "smape_loss",
    "adam_step",
    "pipeline_grad_check",
    "ForecastSet",
    "MetricReport",
    "smape_metric",
    "nd_metric",
    "mape_metric",
    "aggregate",
    "ensemble_median",
    "report",
    "write_forecasts",
    "read_forecasts",
    "random_search",
    "ablation_grid",
    "ablation_label",
    "TrialResult",
    "synthetic_dataset",
    "toy_meta_dataset",
    "RunManifest",
  ]
