"""Experiment orchestration: dataset files, staged training, evaluation, ablations, rendering."""

from .config import RunConfig, RunRecord
from .pipeline import cmd_ablate, cmd_eval, cmd_gen, cmd_run, cmd_train
from .visualize import cmd_visualize

__all__ = ["RunConfig", "RunRecord", "cmd_ablate", "cmd_eval", "cmd_gen", "cmd_run", "cmd_train", "cmd_visualize"]
