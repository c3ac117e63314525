"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .optim import value_and_grad
from .params import ParamSet
from .tensor import Tensor, no_grad, record_kinks

Builder = Callable[[np.random.Generator], tuple[Callable[[dict[str, Tensor]], Tensor], ParamSet]]


class KinkError(RuntimeError):
    """No smooth sample point was found within the retry budget."""


def _numeric_grad(loss_fn, params: ParamSet, eps: float) -> dict[str, np.ndarray]:
    out = {}
    with no_grad():
        for name in params:
            base = params[name]
            g = np.zeros_like(base)
            for i in range(base.size):
                plus = base.copy().ravel()
                minus = base.copy().ravel()
                plus[i] += eps
                minus[i] -= eps
                fp = loss_fn(_swap(params, name, plus.reshape(base.shape))).item()
                fm = loss_fn(_swap(params, name, minus.reshape(base.shape))).item()
                g.flat[i] = (fp - fm) / (2 * eps)
            out[name] = g
    return out


def _swap(params: ParamSet, name: str, value: np.ndarray) -> dict[str, Tensor]:
    leaves = params.constants()
    leaves[name] = Tensor(value, op=name)
    return leaves


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))


def grad_check(builder: Builder, seed: int, eps: float = 1e-5, max_retries: int = 50) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``builder(rng)`` returns ``(loss_fn, params)``. A sample point whose relu
    inputs or max-pool runner-up gaps come within ``100 * eps`` of a kink is
    discarded and a new one drawn from the same generator.
    """
    rng = np.random.default_rng(seed)
    kink_tol = 100 * eps
    for _ in range(max_retries):
        loss_fn, params = builder(rng)
        with record_kinks() as margins:
            with no_grad():
                loss_fn(params.constants())
        if margins and min(margins) < kink_tol:
            continue
        _, grads = value_and_grad(loss_fn, params)
        numeric = _numeric_grad(loss_fn, params, eps)
        return max(relative_error(grads[k], numeric[k]) for k in params)
    raise KinkError(f"no kink-free sample point in {max_retries} draws")
