"""Optimizers and the shared minibatch loop used by every trainable model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import ConfigError, Tensor

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when a training loss turns NaN or infinite."""


@dataclass
class OptimizerSettings:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.algorithm!r} (expected adam or sgd)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning_rate > 0, batch_size >= 1, epochs >= 0 required")


class Adam:
    def __init__(self, params: Mapping[str, Tensor], settings: OptimizerSettings,
                 frozen_rows: Mapping[str, int] | None = None):
        self.params = params
        self.s = settings
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.frozen_rows = dict(frozen_rows or {})

    def step(self) -> None:
        self.t += 1
        s = self.s
        c1 = 1 - s.beta1**self.t
        c2 = 1 - s.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if k in self.frozen_rows:
                g = g.copy()
                g[self.frozen_rows[k]] = 0
            m, v = self.m[k], self.v[k]
            m *= s.beta1
            m += (1 - s.beta1) * g
            v *= s.beta2
            v += (1 - s.beta2) * g * g
            update = (s.learning_rate / c1) * m / (np.sqrt(v / c2) + s.eps)
            p.data -= update.astype(p.data.dtype)


class SGD:
    def __init__(self, params: Mapping[str, Tensor], settings: OptimizerSettings,
                 frozen_rows: Mapping[str, int] | None = None):
        self.params = params
        self.s = settings
        self.frozen_rows = dict(frozen_rows or {})

    def step(self) -> None:
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if k in self.frozen_rows:
                g = g.copy()
                g[self.frozen_rows[k]] = 0
            p.data -= (self.s.learning_rate * g).astype(p.data.dtype)


def make_optimizer(params, settings: OptimizerSettings, frozen_rows=None):
    cls = Adam if settings.algorithm == "adam" else SGD
    return cls(params, settings, frozen_rows)


@dataclass
class TrainLog:
    epoch_loss: list[float] = field(default_factory=list)
    train_metric: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = []
        for i, loss in enumerate(self.epoch_loss):
            tr = self.train_metric[i] if i < len(self.train_metric) else float("nan")
            va = self.val_metric[i] if i < len(self.val_metric) else float("nan")
            out.append(f"epoch={i} loss={loss:.6f} train={tr:.4f} val={va:.4f}")
        return out


def run_epochs(
    params: Mapping[str, Tensor],
    n: int,
    batch_loss: Callable[[np.ndarray, np.random.Generator], Tensor],
    settings: OptimizerSettings,
    shuffle_rng: Callable[[int], np.random.Generator],
    dropout_rng: Callable[[int], np.random.Generator],
    on_epoch_end: Callable[[int, float], None] | None = None,
    frozen_rows: Mapping[str, int] | None = None,
) -> list[float]:
    """Minibatch descent over ``n`` examples.

    ``batch_loss(indices, rng)`` builds the loss graph for one batch. Returns
    the mean training loss per epoch. Raises DivergenceError on NaN/Inf.
    """
    opt = make_optimizer(params, settings, frozen_rows)
    losses = []
    for epoch in range(settings.epochs):
        order = shuffle_rng(epoch).permutation(n)
        drop = dropout_rng(epoch)
        total, batches = 0.0, 0
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            for p in params.values():
                p.grad = None
            loss = batch_loss(idx, drop)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"loss became {value} at epoch {epoch}, batch {batches}")
            loss.backward()
            opt.step()
            total += value
            batches += 1
        mean_loss = total / max(batches, 1)
        losses.append(mean_loss)
        logger.debug("epoch %d loss %.5f", epoch, mean_loss)
        if on_epoch_end is not None:
            on_epoch_end(epoch, mean_loss)
    for p in params.values():
        p.grad = None
    return losses
