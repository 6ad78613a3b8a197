"""Experiment plumbing: configuration, metrics, checkpoints, plots, oracles and the CLI."""

from .checkpoint import load_actors, load_critic, read_checkpoint, save_learner, write_checkpoint
from .config import ExperimentConfig
from .metrics import HEADER, MetricsRow, MetricsWriter, read_metrics
from .plot import emit_plot

__all__ = [
    "ExperimentConfig", "HEADER", "MetricsRow", "MetricsWriter", "emit_plot", "load_actors", "load_critic",
    "read_checkpoint", "read_metrics", "save_learner", "write_checkpoint",
]
