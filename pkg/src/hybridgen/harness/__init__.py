"""Experiment configuration, orchestration, run records and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import build, run_experiment
from .records import RunRecord, load_record, write_record

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "build",
    "load_config",
    "load_record",
    "parse_config",
    "run_experiment",
    "write_record",
]
