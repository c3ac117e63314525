"""First-order MAML meta-training and test-time adaptation.

The inner loop is plain gradient descent with step size ``alpha`` on the
support-set cross-entropy; the meta-update is an Adam step with rate
``beta`` on the mean of the query gradients evaluated at each task's
adapted parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import (
    AdamState,
    ParamSet,
    Tensor,
    adam_step,
    cce_loss,
    dense_forward,
    init_dense,
    no_grad,
    relu,
    sgd_step,
    softmax,
    value_and_grad,
)
from .datasets import PersonDataset
from .episodes import ALL, SamplingMode, Task, TaskConfig, TaskSampler
from .errors import DataError, NumericError, ShapeError


@dataclass(frozen=True)
class MamlConfig:
    alpha: float = 0.4
    beta: float = 0.001
    n_tasks: int = 32
    gs: int = 5
    meta_gs: int = 10
    epochs: int = 100
    k_support: int = 5
    k_query: int | str = ALL
    mode: SamplingMode = SamplingMode.PERSONALISED
    hidden: int = 128
    seed: int = 0
    checkpoint_every: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplingMode.parse(self.mode))
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        # gs = 0 is allowed: it reduces FOMAML to plain training on query batches
        if self.gs < 0 or self.meta_gs < 0:
            raise ValueError("gs and meta_gs must be non-negative")
        if self.n_tasks < 1 or self.epochs < 1 or self.hidden < 1:
            raise ValueError("n_tasks, epochs and hidden must be >= 1")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def task_config(self) -> TaskConfig:
        return TaskConfig(self.k_support, self.k_query, self.mode, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass(frozen=True)
class DenseArch:
    """flatten -> dense(hidden) -> relu -> dense(n_classes) -> softmax."""

    input_shape: tuple[int, ...]
    hidden: int
    n_classes: int

    @property
    def n_inputs(self) -> int:
        return int(np.prod(self.input_shape))

    def init(self, rng: np.random.Generator) -> ParamSet:
        return ParamSet(
            init_dense(rng, self.n_inputs, self.hidden, "hidden")
            + init_dense(rng, self.hidden, self.n_classes, "out")
        )

    def check(self, params: ParamSet) -> None:
        expected = {
            "hidden.W": (self.n_inputs, self.hidden),
            "hidden.b": (self.hidden,),
            "out.W": (self.hidden, self.n_classes),
            "out.b": (self.n_classes,),
        }
        if params.shapes != expected:
            raise ShapeError(f"parameters {params.shapes} do not match architecture {expected}")

    def flatten(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != tuple(self.input_shape):
            raise ShapeError(f"inputs of shape {x.shape[1:]} do not match architecture input {self.input_shape}")
        return x.reshape(len(x), -1)

    def logits(self, p: dict[str, Tensor], x2d) -> Tensor:
        h = relu(dense_forward(x2d, p["hidden.W"], p["hidden.b"]))
        return dense_forward(h, p["out.W"], p["out.b"])

    def probs(self, p: dict[str, Tensor], x2d) -> Tensor:
        return softmax(self.logits(p, x2d))

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "hidden": self.hidden, "n_classes": self.n_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "DenseArch":
        return cls(tuple(d["input_shape"]), int(d["hidden"]), int(d["n_classes"]))


def one_hot(y: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k)[np.asarray(y, dtype=int)]


def task_loss(arch: DenseArch, params: ParamSet, x: np.ndarray, y: np.ndarray) -> tuple[float, ParamSet]:
    x2d = arch.flatten(x)
    target = one_hot(y, arch.n_classes)
    return value_and_grad(lambda p: cce_loss(arch.probs(p, x2d), target), params)


def inner_adapt(arch: DenseArch, params: ParamSet, x: np.ndarray, y: np.ndarray, alpha: float, steps: int) -> list[ParamSet]:
    """Full-batch gradient descent on the support loss.

    Returns ``steps + 1`` parameter sets, starting with ``params`` itself.
    """
    if len(x) == 0:
        raise DataError("cannot adapt on an empty support set")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    path = [params]
    for _ in range(steps):
        _, g = task_loss(arch, path[-1], x, y)
        path.append(sgd_step(path[-1], g, alpha))
    return path


@dataclass
class MetaModel:
    params: ParamSet
    arch: DenseArch
    config: MamlConfig
    log: list[dict] = field(default_factory=list)
    checkpoints: list[tuple[int, ParamSet]] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        doc = {
            "kind": "maml",
            "arch": self.arch.to_dict(),
            "config": self.config.to_dict(),
            "params": self.params.to_dict(),
            "log": self.log,
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "MetaModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("kind") != "maml":
            raise DataError(f"{path} is not a MAML checkpoint")
        arch = DenseArch.from_dict(doc["arch"])
        params = ParamSet.from_dict(doc["params"])
        arch.check(params)
        return cls(params, arch, MamlConfig(**doc["config"]), doc.get("log", []))


def meta_gradient(arch: DenseArch, params: ParamSet, tasks: list[Task], alpha: float, gs: int) -> tuple[float, ParamSet]:
    """First-order meta-gradient: mean over tasks of the query gradient at θ′."""
    total = None
    losses = []
    for task in tasks:
        adapted = inner_adapt(arch, params, task.support_x, task.support_y, alpha, gs)[-1]
        loss, g = task_loss(arch, adapted, task.query_x, task.query_y)
        losses.append(loss)
        total = g if total is None else total.zip_map(g, np.add)
    n = len(tasks)
    return float(np.mean(losses)), total.map(lambda v: v / n)


def meta_train(
    ds: PersonDataset,
    cfg: MamlConfig,
    on_iteration: Callable[[int, ParamSet, list[Task]], None] | None = None,
) -> MetaModel:
    """Meta-train a dense network on tasks drawn from ``ds``.

    One epoch is one meta-iteration over ``cfg.n_tasks`` sampled tasks.
    ``on_iteration(epoch, params_before, tasks)`` is called before each
    meta-update.
    """
    arch = DenseArch(ds.input_shape, cfg.hidden, ds.n_classes)
    rng = np.random.default_rng(cfg.seed)
    params = arch.init(rng)
    sampler = TaskSampler(ds, cfg.task_config())
    state = AdamState.zeros_like(params)
    model = MetaModel(params, arch, cfg)
    for epoch in range(1, cfg.epochs + 1):
        tasks = sampler.batch(cfg.n_tasks)
        if on_iteration is not None:
            on_iteration(epoch, params, tasks)
        try:
            loss, grad = meta_gradient(arch, params, tasks, cfg.alpha, cfg.gs)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}") from exc
        if not math.isfinite(loss):
            raise NumericError(f"epoch {epoch}: non-finite meta-train loss")
        params, state = adam_step(params, grad, state, cfg.beta)
        model.log.append({"epoch": epoch, "meta_loss": loss})
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            model.checkpoints.append((epoch, params))
    model.params = params
    return model


def test_adapt(model: MetaModel, support_x: np.ndarray, support_y: np.ndarray, alpha: float | None = None, meta_gs: int | None = None, params: ParamSet | None = None) -> list[ParamSet]:
    """Adapt the meta-model to a held-out person's support set.

    Returns the sequence θ̂ after 0, 1, ..., meta_gs descent steps.
    """
    alpha = model.config.alpha if alpha is None else alpha
    meta_gs = model.config.meta_gs if meta_gs is None else meta_gs
    start = model.params if params is None else params
    model.arch.check(start)
    return inner_adapt(model.arch, start, support_x, support_y, alpha, meta_gs)


def predict(arch: DenseArch, params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Argmax class per instance; ties resolve to the lowest class index."""
    with no_grad():
        logits = arch.logits(params.constants(), arch.flatten(x)).data
    return np.argmax(logits, axis=1)
