"""Experiment harness: configs, sweeps, records and reports."""
from .config import ConfigError, ExperimentConfig, SweepEntry, load_config, parse_config
from .report import report
from .runner import run_experiment, sketch_diag
