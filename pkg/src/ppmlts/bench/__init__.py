"""Experiment configuration, runners and reporting."""
from ..metrics import weighted_f1
from .config import ExperimentConfig, config_from_dict, load_config
from .experiments import run_experiment
from .report import MetricsReport, RunRow, render_report

__all__ = [
    "ExperimentConfig",
    "MetricsReport",
    "RunRow",
    "config_from_dict",
    "load_config",
    "render_report",
    "run_experiment",
    "weighted_f1",
]
