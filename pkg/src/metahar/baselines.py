"""Cosine-attention matching classifier.

An embedding network (dense -> relu, the same body as the MAML learner
without its class head) maps support and query windows to vectors. Each
query attends to the support set through a softmax over cosine
similarities; the attention mass is summed per class to give class
probabilities.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

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
    softmax,
    sqrt,
    transpose,
    value_and_grad,
)
from .datasets import PersonDataset
from .episodes import ALL, SamplingMode, Task, TaskConfig, TaskSampler, meta_test_task
from .errors import DataError, NumericError, ShapeError
from .relation_net import check_stratified

NORM_EPS = 1e-12


@dataclass(frozen=True)
class MatcherConfig:
    k_support: int = 5
    k_query: int | str = ALL
    epochs: int = 20
    tasks_per_epoch: int = 10
    lr: float = 0.001
    hidden: int = 128
    temperature: float = 1.0
    mode: SamplingMode = SamplingMode.PERSONALISED
    early_stopping: bool = True
    patience: int = 5
    val_tasks: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplingMode.parse(self.mode))
        if not (self.lr > 0 and self.temperature > 0):
            raise ValueError("lr and temperature must be positive")
        if min(self.epochs, self.tasks_per_epoch, self.hidden, self.patience, self.val_tasks) < 1:
            raise ValueError("epochs, tasks_per_epoch, hidden, patience and val_tasks must be >= 1")

    def task_config(self) -> TaskConfig:
        return TaskConfig(self.k_support, self.k_query, self.mode, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass
class MatcherModel:
    params: ParamSet
    input_shape: tuple[int, ...]
    n_classes: int
    config: MatcherConfig
    log: list[dict] = field(default_factory=list)
    stop_epoch: int | None = None

    @property
    def embed_width(self) -> int:
        return self.params["embed.W"].shape[1]

    def flatten(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != tuple(self.input_shape):
            raise ShapeError(f"inputs of shape {x.shape[1:]} do not match model input {self.input_shape}")
        return x.reshape(len(x), -1)

    def save(self, path: str | Path) -> None:
        doc = {
            "kind": "matcher",
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "config": self.config.to_dict(),
            "params": self.params.to_dict(),
            "log": self.log,
            "stop_epoch": self.stop_epoch,
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "MatcherModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("kind") != "matcher":
            raise DataError(f"{path} is not a matcher checkpoint")
        return cls(
            ParamSet.from_dict(doc["params"]),
            tuple(doc["input_shape"]),
            int(doc["n_classes"]),
            MatcherConfig(**doc["config"]),
            doc.get("log", []),
            doc.get("stop_epoch"),
        )


def embed(p: dict[str, Tensor], x2d) -> Tensor:
    return relu(dense_forward(x2d, p["embed.W"], p["embed.b"]))


def cosine_matrix(q: Tensor, s: Tensor) -> Tensor:
    """(n_query, n_support) cosine similarities.

    A small constant under the square root keeps all-zero embeddings
    (possible after relu) finite; their similarity is then 0.
    """
    qn = q / sqrt((q * q).sum(axis=1, keepdims=True) + NORM_EPS)
    sn = s / sqrt((s * s).sum(axis=1, keepdims=True) + NORM_EPS)
    return qn @ transpose(sn)


def class_probs(q: Tensor, s: Tensor, support_y: np.ndarray, n_classes: int, temperature: float = 1.0) -> Tensor:
    """Attention over support instances, summed per class -> (n_query, n_classes)."""
    attn = softmax(cosine_matrix(q, s) * temperature)
    membership = np.eye(n_classes)[np.asarray(support_y, dtype=int)]  # (N, C)
    return attn @ Tensor(membership, op="membership")


def _task_loss(model: MatcherModel, task: Task):
    xs, xq = model.flatten(task.support_x), model.flatten(task.query_x)
    ys = task.support_y
    target = np.eye(model.n_classes)[task.query_y]
    temp = model.config.temperature

    def loss(p):
        return cce_loss(class_probs(embed(p, xq), embed(p, xs), ys, model.n_classes, temp), target)

    return loss


def mn_probs(model: MatcherModel, support_x: np.ndarray, support_y: np.ndarray, query_x: np.ndarray) -> np.ndarray:
    check_stratified(support_y, model.n_classes)
    p = model.params.constants()
    with no_grad():
        q = embed(p, model.flatten(query_x))
        s = embed(p, model.flatten(support_x))
        return class_probs(q, s, support_y, model.n_classes, model.config.temperature).data


def mn_predict(model: MatcherModel, support_x: np.ndarray, support_y: np.ndarray, query_x: np.ndarray) -> np.ndarray:
    """Class with the largest summed attention per query; ties go to the lowest index."""
    query_x = np.asarray(query_x, dtype=np.float64)
    if query_x.ndim == len(model.input_shape):
        query_x = query_x[None]
    return np.argmax(mn_probs(model, support_x, support_y, query_x), axis=1)


def _accuracy(model: MatcherModel, task: Task) -> float:
    return float(np.mean(mn_predict(model, task.support_x, task.support_y, task.query_x) == task.query_y))


def mn_train(ds: PersonDataset, cfg: MatcherConfig, val_person: str | None = None) -> MatcherModel:
    """Train the embedding with Adam on CCE, one sampled task per step.

    Early stopping mirrors :func:`metahar.relation_net.rn_train`: a held-out
    training person is scored on ``cfg.val_tasks`` fixed tasks after every
    epoch, ties in accuracy are broken by loss, and the best parameters are
    kept.
    """
    rng = np.random.default_rng(cfg.seed)
    n_in = int(np.prod(ds.input_shape))
    params = ParamSet(init_dense(rng, n_in, cfg.hidden, "embed"))
    model = MatcherModel(params, ds.input_shape, ds.n_classes, cfg)

    train_ds, val_tasks = ds, []
    if cfg.early_stopping and len(ds.person_ids) > 1:
        if val_person is None:
            val_person = ds.person_ids[rng.integers(len(ds.person_ids))]
        train_ds = ds.subset([p for p in ds.person_ids if p != val_person])
        val_rng = np.random.default_rng(cfg.seed + 1)
        val_tasks = [meta_test_task(ds, val_person, cfg.k_support, val_rng) for _ in range(cfg.val_tasks)]

    sampler = TaskSampler(train_ds, cfg.task_config())
    state = AdamState.zeros_like(params)
    best, best_params, since_best = (-1.0, -np.inf), params, 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(cfg.tasks_per_epoch):
            task = sampler.sample()
            try:
                loss, grads = value_and_grad(_task_loss(model, task), model.params)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}") from exc
            model.params, state = adam_step(model.params, grads, state, cfg.lr)
            losses.append(loss)
        record = {"epoch": epoch, "loss": float(np.mean(losses))}
        if val_tasks:
            acc = float(np.mean([_accuracy(model, t) for t in val_tasks]))
            with no_grad():
                consts = model.params.constants()
                vl = float(np.mean([_task_loss(model, t)(consts).data for t in val_tasks]))
            record["val_accuracy"], record["val_loss"] = acc, vl
            if (acc, -vl) > best:
                best, best_params, since_best = (acc, -vl), model.params, 0
            else:
                since_best += 1
        model.log.append(record)
        if val_tasks and since_best >= cfg.patience:
            model.stop_epoch = epoch
            break
    if val_tasks:
        model.params = best_params
    return model
