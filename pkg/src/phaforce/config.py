"""YAML run configuration with strict validation.

A config file drives the CLI end to end: dataset generation, training, and
evaluation. Unknown keys and inconsistent values are rejected with
`ConfigError`, which the CLI maps to exit code 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .pipeline import PipelineConfig
from .tasks import TASK_PHASES

ABLATIONS = ("none", "no_fast", "no_pb", "no_ori")
SIM_TASKS = ("charger", "usb", "wiping")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "charger"
    seed: int = 0
    out_root: str | None = None
    n_views: int = 3
    view_dim: int = 32
    n_heads: int = 8
    n_demos: int = 80
    n_trials: int = 20
    max_steps: int = 240
    ood: bool = False
    ablate: str = "none"
    pipeline: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in SIM_TASKS:
            raise ConfigError(
                f"task must be one of {SIM_TASKS}, got {self.task!r}")
        if self.task not in TASK_PHASES:
            raise ConfigError(f"no phase table for task {self.task!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative int: {self.seed}")
        d = self.n_views * self.view_dim
        if self.n_heads < 1 or d % self.n_heads != 0:
            raise ConfigError(
                f"token dim {d} must be divisible by n_heads={self.n_heads}")
        if self.ablate not in ABLATIONS:
            raise ConfigError(
                f"ablate must be one of {ABLATIONS}, got {self.ablate!r}")
        for name, lo in (("n_demos", 2), ("n_trials", 1), ("max_steps", 1)):
            v = getattr(self, name)
            if not isinstance(v, int) or v < lo:
                raise ConfigError(f"{name} must be an int >= {lo}, got {v!r}")
        if self.ood and self.task != "wiping":
            raise ConfigError("the out-of-distribution variant only exists "
                              "for the wiping task")
        if not isinstance(self.pipeline, dict):
            raise ConfigError("pipeline must be a mapping of overrides")
        allowed = {f.name for f in fields(PipelineConfig)}
        unknown = set(self.pipeline) - allowed
        if unknown:
            raise ConfigError(f"unknown pipeline keys: {sorted(unknown)}")

    def pipeline_config(self) -> PipelineConfig:
        overrides = dict(self.pipeline)
        overrides.setdefault("no_pb", self.ablate == "no_pb")
        overrides.setdefault("no_ori", self.ablate == "no_ori")
        overrides.setdefault("seed", self.seed)
        overrides.setdefault("n_demos", self.n_demos)
        return PipelineConfig(task=self.task, **overrides)


def load_config(path: Path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    allowed = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**raw)
