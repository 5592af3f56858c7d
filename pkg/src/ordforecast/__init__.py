"""Ordinal-regression seq2seq forecasting with cross-series transfer."""

from .quantizer import OrdinalQuantizer, OrdinalSequence, build_quantizer, decode_density, extend_range
from .seq2seq import Seq2SeqModel, TrainingConfig, init_model, train
from .forecaster import ForecastDistribution, finetune, forecast, predictive_mean, predictive_quantile
from .baselines import GaussianForecast, ar_forecast, fit_ar, fit_gp, gp_forecast
from .metrics import MetricReport, nll, qq_distance, rank_table, rmse

__version__ = "0.1.0"
