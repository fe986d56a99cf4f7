"""Quasi-static contact simulators, scripted experts, and demo datasets."""

from .dataset import generate_dataset, load_dataset, load_episode, save_episode
from .env import (PegConfig, PegEnv, StepResult, WipingConfig, WipingEnv,
                  WorkspaceViolation, make_env)
from .expert import (Episode, ExpertFailure, run_expert, run_peg_expert,
                     run_wiping_expert)
from .render import render_peg_views, render_wiping_views

__all__ = [
    "PegConfig", "PegEnv", "StepResult", "WipingConfig", "WipingEnv",
    "WorkspaceViolation", "make_env",
    "Episode", "ExpertFailure", "run_expert", "run_peg_expert",
    "run_wiping_expert",
    "generate_dataset", "load_dataset", "load_episode", "save_episode",
    "render_peg_views", "render_wiping_views",
]
