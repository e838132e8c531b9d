"""Workload generators and measurement for the evaluation scenarios."""
from . import scenarios  # noqa: F401  (registers the scenarios)
from .core import (COLUMNS, SCENARIOS, Evaluation, Row, evaluate, linear_fit, percentile,
                   read_csv, run_scenario, write_csv)
from .scenarios import DEFAULTS, QUICK, group_noise, name_noise

__all__ = ["COLUMNS", "SCENARIOS", "Evaluation", "Row", "evaluate", "linear_fit",
           "percentile", "read_csv", "run_scenario", "write_csv", "DEFAULTS", "QUICK",
           "group_noise", "name_noise"]
