"""Experiment configuration, presets, orchestration and reporting."""

from .config import PRESETS, ExperimentConfig, preset, tolerance_sweep
from .experiment import (
    ErrorEntry,
    ErrorReport,
    ExperimentError,
    ExperimentResult,
    build_problem,
    compare_runs,
    recompute_errors,
    run_experiment,
)

__all__ = [
    "PRESETS", "ExperimentConfig", "preset", "tolerance_sweep", "ErrorEntry", "ErrorReport", "ExperimentError",
    "ExperimentResult", "build_problem", "compare_runs", "recompute_errors", "run_experiment",
]
