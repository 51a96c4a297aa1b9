"""Experiment harness: configs, the training loop, sweeps, metrics and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict, load_config, with_override
from .metrics import RunRecord, emit_metrics, load_summary, read_csv, write_csv
from .runner import RunResult, run_and_emit, run_experiment, run_sweep

__all__ = [
    "RunConfig",
    "RunRecord",
    "RunResult",
    "config_from_dict",
    "emit_metrics",
    "load_checkpoint",
    "load_config",
    "load_summary",
    "read_csv",
    "run_and_emit",
    "run_experiment",
    "run_sweep",
    "save_checkpoint",
    "with_override",
    "write_csv",
]
