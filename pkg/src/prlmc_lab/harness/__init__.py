"""Experiment harness: configuration, execution and reporting."""

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import run_experiment
from .report import Report, Verdict
