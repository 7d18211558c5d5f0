"""Experiment configs, runners and output files."""

from .cli import main
from .config import ExperimentSpec, load_config, parse_config
from .output import ExperimentReport, emit, fit_slope, read_csv_rows, render
from .experiments import cell_seed, control_spikiness, run

__all__ = [
    "ExperimentSpec", "load_config", "parse_config", "ExperimentReport", "emit",
    "fit_slope", "read_csv_rows", "render", "cell_seed", "control_spikiness", "run", "main",
]
