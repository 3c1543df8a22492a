"""
optim.py - Adam, plateau learning-rate decay and early stopping.

Both schedulers watch the validation loss. An epoch improves when
val < best - min_delta (strictly less with the default min_delta 0).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from constants import DEFAULT_EARLY_STOP, DEFAULT_PLATEAU_FACTOR, DEFAULT_PLATEAU_PATIENCE
from errors import NonFiniteError, TrainingError
from tensor import Parameter

_logger = logging.getLogger("botdna.optim")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m:    list[np.ndarray] = field(default_factory=list)
    v:    list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Parameter]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params], 0)


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray | None] | None,
              state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """
    One bias-corrected Adam update, in place on every parameter's data.
    *grads* defaults to each parameter's accumulated .grad; a missing
    gradient counts as zero.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise TrainingError(f"adam: {len(params)} params, {len(grads)} grads, "
                            f"{len(state.m)} state slots")
    grads = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter '{p.name}'")

    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


# ---------------------------------------------------------------------------
# Schedulers
# ---------------------------------------------------------------------------

class ReduceLROnPlateau:
    """Multiply the learning rate by *factor* after *patience* epochs without improvement."""

    def __init__(self, lr: float, factor: float = DEFAULT_PLATEAU_FACTOR,
                 patience: int = DEFAULT_PLATEAU_PATIENCE, min_delta: float = 0.0):
        self.lr        = lr
        self.factor    = factor
        self.patience  = patience
        self.min_delta = min_delta
        self.best      = float("inf")
        self.counter   = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.counter = 0
            return self.lr
        self.counter += 1
        if self.counter >= self.patience:
            old, self.lr = self.lr, self.lr * self.factor
            self.counter = 0
            _logger.info(f"learning rate {old:.3g} → {self.lr:.3g} (plateau)")
        return self.lr


class EarlyStopping:
    """Stop after *patience* consecutive epochs without improvement; remembers the best epoch."""

    def __init__(self, patience: int = DEFAULT_EARLY_STOP, min_delta: float = 0.0):
        self.patience   = patience
        self.min_delta  = min_delta
        self.best       = float("inf")
        self.best_epoch = -1
        self.counter    = 0

    def step(self, val_loss: float, epoch: int) -> bool:
        """Record an epoch; True when training should stop."""
        if val_loss < self.best - self.min_delta:
            self.best       = val_loss
            self.best_epoch = epoch
            self.counter    = 0
            return False
        self.counter += 1
        if self.counter >= self.patience:
            _logger.info(f"early stop at epoch {epoch}: no improvement for "
                         f"{self.counter} epochs (best epoch {self.best_epoch})")
            return True
        return False

    def is_best(self, epoch: int) -> bool:
        return epoch == self.best_epoch
