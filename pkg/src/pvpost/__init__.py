"""Statistical and machine-learning post-processing of PV power ensemble forecasts.

The package turns 51-member ensemble forecasts of normalized PV power into
calibrated predictive distributions.  Parametric models (censored-normal
EMOS, boosted EMOS and a distributional regression network) predict the
parameters of a doubly censored normal law; quantile models (linear
quantile regression, QRNN, Bernstein quantile networks and non-crossing
QRNN) predict 51 quantiles directly.  Verification scores, significance
tests and a command-line interface complete the workflow.
"""

from . import censored_normal, dataset, drn, emos, inference, neural_core, quantile_models
from . import report, scoring
from .censored_normal import CensoredNormalParams
from .dataset import Dataset, SynthConfig, daytime_filter, ingest_csv, synth_generate
from .errors import (
    ConfigError,
    DomainError,
    ParseError,
    PvPostError,
    SchemaError,
    TrainingError,
    ValidationError,
)
from .pipeline import MODEL_KINDS, TrainedModel, fit_model, load_model, predict_quantiles, save_model
from .scoring import LEVELS, QuantileForecast

__version__ = "0.1.0"

__all__ = [
    "CensoredNormalParams",
    "ConfigError",
    "Dataset",
    "DomainError",
    "LEVELS",
    "MODEL_KINDS",
    "ParseError",
    "PvPostError",
    "QuantileForecast",
    "SchemaError",
    "SynthConfig",
    "TrainedModel",
    "TrainingError",
    "ValidationError",
    "censored_normal",
    "daytime_filter",
    "dataset",
    "drn",
    "emos",
    "fit_model",
    "inference",
    "ingest_csv",
    "load_model",
    "neural_core",
    "predict_quantiles",
    "quantile_models",
    "report",
    "save_model",
    "scoring",
    "synth_generate",
]
