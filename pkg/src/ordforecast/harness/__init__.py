"""Data ingestion, checkpoints and experiment pipelines."""

from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .data import DatasetManifest, SeriesEntry, TimeSeries, load_series, make_windows, split_windows
from .experiments import (
    ExperimentConfig,
    few_shot_comparison,
    run_embed,
    run_few_shot,
    run_report,
    run_train_gum,
    run_zero_shot,
    train_gum,
)
