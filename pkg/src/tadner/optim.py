"""Gradient descent with decoupled weight decay and linear warmup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLoss


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3e-5
    warmup_fraction: float = 0.01
    weight_decay: float = 0.0
    batch_size: int = 64
    max_steps: int = 1000

    def __post_init__(self):
        if self.learning_rate < 0 or not 0 <= self.warmup_fraction <= 1:
            raise ValueError("bad optimizer settings")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size >= 1 and max_steps >= 0 required")


class EarlyStopMonitor:
    """Loss-rise early stopping.

    Feed one loss observation per epoch. After `beta` consecutive rises,
    observe() returns the index of the observation that preceded the rise
    streak (whose parameters should be restored); otherwise None. A rise is
    strictly increasing loss; with stop_on_equal=True, equal loss counts as a
    rise too, so beta=1 stops as soon as the loss is not strictly decreasing.
    """

    def __init__(self, beta: int, stop_on_equal: bool = False):
        if beta < 1:
            raise ValueError("beta must be >= 1")
        self.beta = beta
        self.stop_on_equal = stop_on_equal
        self._prev: float | None = None
        self._streak = 0
        self._count = 0

    def observe(self, loss: float) -> int | None:
        if self._prev is not None:
            rose = loss > self._prev or (self.stop_on_equal and loss == self._prev)
            self._streak = self._streak + 1 if rose else 0
        self._prev = loss
        index = self._count
        self._count += 1
        if self._streak >= self.beta:
            return index - self.beta
        return None


class Sgdw:
    """p <- p - lr_t * grad - lr_t * wd * p, with lr ramping linearly over the warmup steps."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.step_count = 0
        self.warmup_steps = max(1, int(round(cfg.warmup_fraction * cfg.max_steps)))

    def lr_at(self, step: int) -> float:
        if self.cfg.warmup_fraction > 0 and step < self.warmup_steps:
            return self.cfg.learning_rate * (step + 1) / self.warmup_steps
        return self.cfg.learning_rate

    def apply(self, params: np.ndarray, grad: np.ndarray) -> None:
        lr = self.lr_at(self.step_count)
        params -= lr * grad
        if self.cfg.weight_decay:
            params -= lr * self.cfg.weight_decay * params

    def step(self, param_arrays, grad_arrays, loss: float) -> None:
        """Update several parameter arrays at once; counts as one optimizer step."""
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss!r} at step {self.step_count}")
        for params, grad in zip(param_arrays, grad_arrays):
            if not np.all(np.isfinite(grad)):
                raise NonFiniteLoss(f"non-finite gradient at step {self.step_count}")
            self.apply(params, grad)
        for params in param_arrays:
            if not np.all(np.isfinite(params)):
                raise NonFiniteLoss(f"non-finite parameters after step {self.step_count}")
        self.step_count += 1
