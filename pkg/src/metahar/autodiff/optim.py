"""Out-of-place optimizer steps and the gradient helper they consume."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from ..errors import NumericError
from .params import ParamSet
from .tensor import Tensor, backward


def value_and_grad(loss_fn: Callable[..., Tensor], params: ParamSet, *args, **kwargs) -> tuple[float, ParamSet]:
    """Evaluate ``loss_fn(leaves, *args)`` and its gradient w.r.t. every entry.

    Parameters that do not influence the loss get a zero gradient.
    """
    leaves = params.leaves()
    loss = loss_fn(leaves, *args, **kwargs)
    backward(loss)
    grads = ParamSet(
        (k, t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()
    )
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    return value, grads


def sgd_step(params: ParamSet, grads: Mapping[str, np.ndarray], lr: float) -> ParamSet:
    """``params - lr * grads``; the inputs are left untouched."""
    return params.zip_map(grads, lambda p, g: p - lr * g)


@dataclass(frozen=True)
class AdamState:
    m: ParamSet
    v: ParamSet
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(
    params: ParamSet,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update. Returns the new parameters and state."""
    params.check_like(state.m)
    params.check_like(state.v)
    params.check_like(grads)
    t = state.step + 1
    m = state.m.zip_map(grads, lambda m_, g: beta1 * m_ + (1.0 - beta1) * g)
    v = state.v.zip_map(grads, lambda v_, g: beta2 * v_ + (1.0 - beta2) * g * g)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new = ParamSet(
        (k, p - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)) for k, p in params.items()
    )
    return new, AdamState(m, v, t)
