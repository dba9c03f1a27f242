"""Experiment harness: configuration, the CLI commands, checks and plots."""

from .checks import CheckResult, cmd_check, format_report
from .commands import RunRecord, SweepResult, check_replay, cmd_policy, cmd_run, cmd_sweep, read_config_hash
from .config import DEFAULTS, Cell, ConfigError, ExperimentConfig, config_hash

__all__ = [
    "CheckResult",
    "cmd_check",
    "format_report",
    "RunRecord",
    "SweepResult",
    "check_replay",
    "cmd_policy",
    "cmd_run",
    "cmd_sweep",
    "read_config_hash",
    "DEFAULTS",
    "Cell",
    "ConfigError",
    "ExperimentConfig",
    "config_hash",
]
