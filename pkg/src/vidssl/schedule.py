"""Scalar training schedules: learning rate, weight decay, EMA momentum.

All three are pure functions of the global step.  The learning rate ramps
linearly from zero over the warmup steps and then follows a cosine decay to
its final value; weight decay and EMA momentum follow cosine ramps between
their endpoints across the whole run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ScheduleConfig:
    total_epochs: int
    steps_per_epoch: int
    base_lr: float = 5e-4
    warmup_epochs: int = 5
    final_lr: float = 1e-6
    wd_start: float = 0.04
    wd_end: float = 0.1
    ema_start: float = 0.996
    ema_end: float = 1.0

    def __post_init__(self) -> None:
        if self.total_epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("total_epochs and steps_per_epoch must be >= 1")
        if self.warmup_epochs > self.total_epochs:
            raise ValueError("warmup_epochs must not exceed total_epochs")
        if min(self.base_lr, self.final_lr, self.wd_start, self.wd_end) < 0:
            raise ValueError("rates must be >= 0")
        if self.wd_start > self.wd_end:
            raise ValueError("wd_start must be <= wd_end")
        if not 0 <= self.ema_start <= self.ema_end <= 1:
            raise ValueError("need 0 <= ema_start <= ema_end <= 1")

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch


def _check_step(cfg: ScheduleConfig, step: int) -> None:
    if not 0 <= step < cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps})")


def _cosine(start: float, end: float, progress: float) -> float:
    return end + 0.5 * (start - end) * (1.0 + math.cos(math.pi * progress))


def lr_at(cfg: ScheduleConfig, step: int) -> float:
    """Linear warmup 0 -> base_lr, then cosine decay base_lr -> final_lr."""
    _check_step(cfg, step)
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    span = cfg.total_steps - 1 - cfg.warmup_steps
    if span <= 0:
        return cfg.base_lr
    return _cosine(cfg.base_lr, cfg.final_lr, (step - cfg.warmup_steps) / span)


def wd_at(cfg: ScheduleConfig, step: int) -> float:
    """Cosine ramp wd_start -> wd_end over all steps; monotone non-decreasing."""
    _check_step(cfg, step)
    if cfg.total_steps == 1:
        return cfg.wd_start
    return _cosine(cfg.wd_start, cfg.wd_end, step / (cfg.total_steps - 1))


def ema_momentum_at(cfg: ScheduleConfig, step: int) -> float:
    """Cosine ramp ema_start -> ema_end over all steps; stays in [0, 1]."""
    _check_step(cfg, step)
    if cfg.total_steps == 1:
        return cfg.ema_start
    return _cosine(cfg.ema_start, cfg.ema_end, step / (cfg.total_steps - 1))


def dump_rows(cfg: ScheduleConfig) -> list[tuple[int, float, float, float]]:
    """(step, lr, wd, ema momentum) for every step, for CSV export / plotting."""
    return [(s, lr_at(cfg, s), wd_at(cfg, s), ema_momentum_at(cfg, s)) for s in range(cfg.total_steps)]
