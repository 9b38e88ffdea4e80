"""Weighted sigmoid cross-entropy for multi-label targets.

``q`` multiplies the cost of positive targets: q > 1 favours recall, q < 1
precision. Training always goes through the stabilised expanded form

    (1 - z) x + (1 + (q - 1) z) (max(-x, 0) + log1p(exp(-|x|)))

which stays finite for any finite logit.
"""

from __future__ import annotations

import numpy as np

from .tensor import ConfigError, Tensor, _result, _wrap, stable_sigmoid


class TargetError(ValueError):
    pass


def _check(x: np.ndarray, z: np.ndarray, q: float) -> None:
    if not q > 0:
        raise ConfigError(f"positive weight q must be > 0, got {q}")
    if x.shape != z.shape:
        raise TargetError(f"logits {x.shape} and targets {z.shape} differ in shape")
    if not np.all((z == 0) | (z == 1)):
        raise TargetError("targets must be 0/1 multi-hot")


def softplus_neg(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(-x)), finite everywhere."""
    return np.maximum(-x, 0) + np.log1p(np.exp(-np.abs(x)))


def elementwise_loss(x, z, q: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check(x, z, q)
    return (1 - z) * x + (1 + (q - 1) * z) * softplus_neg(x)


def elementwise_grad(x, z, q: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return stable_sigmoid(x) * (1 + (q - 1) * z) - q * z


def naive_form(x, z, q: float) -> np.ndarray:
    """Direct  -q z log s(x) - (1 - z) log(1 - s(x)). Overflows for large |x|.

    ``1 - s(x)`` is evaluated as ``1 / (1 + exp(x))``; subtracting from one
    would cancel most significant digits once s(x) is close to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    s = 1.0 / (1.0 + np.exp(-x))
    s_neg = 1.0 / (1.0 + np.exp(x))
    return -q * z * np.log(s) - (1 - z) * np.log(s_neg)


def expanded_form(x, z, q: float) -> np.ndarray:
    """(1 - z) x + (1 + (q - 1) z) log(1 + exp(-x)), unstabilised."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return (1 - z) * x + (1 + (q - 1) * z) * np.log(1 + np.exp(-x))


def loss_form_equivalence_check(x_grid, z: int, q: float) -> float:
    """Max |naive - expanded| over ``x_grid`` at 64-bit precision."""
    x = np.asarray(x_grid, dtype=np.float64)
    if np.max(np.abs(x)) > 20:
        raise ValueError("naive form is only representable for |x| <= 20")
    zz = np.full_like(x, float(z))
    return float(np.max(np.abs(naive_form(x, zz, q) - expanded_form(x, zz, q))))


def weighted_sigmoid_ce(logits: Tensor, targets, q: float = 30.0, reduction: str = "mean") -> Tensor:
    """Scalar loss tensor.

    ``reduction="mean"`` sums over the class axis and averages over every
    leading (batch) axis; ``"sum"`` sums everything.
    """
    logits = _wrap(logits)
    x = logits.data
    z = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=x.dtype)
    _check(x, z, q)
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    x64 = x.astype(np.float64)
    per = (1 - z) * x64 + (1 + (q - 1) * z) * softplus_neg(x64)
    n = int(np.prod(x.shape[:-1])) if reduction == "mean" and x.ndim > 1 else 1
    value = np.asarray(per.sum() / n, dtype=x.dtype)
    grad_elem = ((stable_sigmoid(x64) * (1 + (q - 1) * z) - q * z) / n).astype(x.dtype)

    def backward(g):
        return (grad_elem * g,)

    return _result(value, (logits,), backward, "weighted_sigmoid_ce")
