"""Run configuration: flat key-value settings loadable from a TOML file
with command-line overrides layered on top."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError


@dataclass
class RunConfig:
    image: str = ""
    out: str = "out"
    n: int = 500
    kappa: int = 125
    delta: float = 1e-2
    epsilon: float | None = None
    max_outer: int | None = None
    interval: int = 50
    sparsify_start: int = 3000
    prune_iter: int = 6000
    iters: int = 8000
    seed: int = 0
    eval_every: int = 50
    rho: float = 0.2
    keep_fraction: float = 0.25
    criterion: str = "opacity-magnitude"
    tile_size: int = 32
    threads: int | None = None

    def validate(self, *, need_kappa=False, need_keep_fraction=False):
        problems = []
        if not self.image:
            problems.append("image: a target image path is required")
        elif not os.path.exists(self.image):
            problems.append(f"image: file not found: {self.image}")
        if self.n < 1:
            problems.append(f"n: must be >= 1, got {self.n}")
        if self.iters < 0:
            problems.append(f"iters: must be >= 0, got {self.iters}")
        if self.eval_every < 1:
            problems.append(f"eval_every: must be >= 1, got {self.eval_every}")
        if not (0.0 <= self.rho <= 1.0):
            problems.append(f"rho: must be in [0, 1], got {self.rho}")
        if need_kappa:
            if self.kappa >= self.n:
                problems.append(f"kappa ({self.kappa}) must be < n ({self.n})")
            if self.kappa < 1:
                problems.append(f"kappa: must be >= 1, got {self.kappa}")
            if self.delta <= 0:
                problems.append(f"delta: must be > 0, got {self.delta}")
            if self.interval < 1:
                problems.append(f"interval: must be >= 1, got {self.interval}")
            elif self.interval > self.prune_iter - self.sparsify_start:
                problems.append(
                    f"interval ({self.interval}) must fit inside the sparsify "
                    f"window of {self.prune_iter - self.sparsify_start} iterations")
            if not (0 <= self.sparsify_start < self.prune_iter <= self.iters):
                problems.append(
                    f"milestones: need 0 <= sparsify_start ({self.sparsify_start})"
                    f" < prune_iter ({self.prune_iter}) <= iters ({self.iters})")
        if need_keep_fraction:
            if not (0.0 < self.keep_fraction < 1.0):
                problems.append(
                    f"keep_fraction: must be in (0, 1), got {self.keep_fraction}")
            if not (1 <= self.prune_iter <= self.iters):
                problems.append(
                    f"prune_iter ({self.prune_iter}) must lie in "
                    f"[1, iters ({self.iters})]")
        if problems:
            raise ConfigError("; ".join(problems))
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def load_config(path=None, overrides=None):
    """Build a RunConfig from an optional TOML file plus explicit overrides
    (typically parsed command-line flags; None values are ignored)."""
    values = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config file {path} is not valid TOML: {e}")
        for key, value in data.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return RunConfig(**values)
