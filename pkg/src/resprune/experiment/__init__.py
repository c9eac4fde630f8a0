"""Experiment orchestration: configs, training runs and reports."""
from .config import METHODS, ExperimentConfig, from_mapping, load_config, parse_config_text
from .runner import (MetricsRecord, RunResult, accuracy_gate, evaluate, planned_flops,
                     read_metrics, run_experiment)

__all__ = ["METHODS", "ExperimentConfig", "from_mapping", "load_config", "parse_config_text",
           "MetricsRecord", "RunResult", "accuracy_gate", "evaluate", "planned_flops", "read_metrics",
           "run_experiment"]
