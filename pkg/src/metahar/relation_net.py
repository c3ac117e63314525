"""Relation Network training and matching-based inference.

A convolutional feature module embeds support and query instances; a
small dense relation module scores each (class aggregate, query) pair in
(0, 1). Both modules are trained end to end with Adam.
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
    concat,
    conv2d_forward,
    crop_to_multiple,
    dense_forward,
    init_conv,
    init_dense,
    maxpool2d,
    mse_loss,
    no_grad,
    relu,
    sigmoid,
    softmax,
    tmax,
    value_and_grad,
)
from .datasets import PersonDataset
from .episodes import ALL, SamplingMode, Task, TaskConfig, TaskSampler, meta_test_task
from .errors import DataError, NumericError, ShapeError

AGGREGATIONS = ("sum", "max")
LOSSES = ("mse", "cce")
LAYOUTS = ("rows", "frames")


@dataclass(frozen=True)
class RNConfig:
    alpha: float = 0.001
    k_support: int = 5
    k_query: int | str = ALL
    epochs: int = 300
    tasks_per_epoch: int = 20
    mode: SamplingMode = SamplingMode.PERSONALISED
    loss: str = "mse"
    patience: int = 10
    early_stopping: bool = True
    val_tasks: int = 5
    aggregation: str = "sum"
    kernels: int = 16
    relation_hidden: int = 64
    layout: str = "rows"
    seed: int = 0
    checkpoint_every: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplingMode.parse(self.mode))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if min(self.patience, self.epochs, self.tasks_per_epoch, self.val_tasks) < 1:
            raise ValueError("patience, epochs, tasks_per_epoch and val_tasks must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")

    def task_config(self) -> TaskConfig:
        return TaskConfig(self.k_support, self.k_query, self.mode, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass(frozen=True)
class RNArch:
    """Feature module conv(3x3) -> relu -> maxpool(2x2) -> flatten; relation
    module dense(hidden) -> relu -> dense(1) -> sigmoid on (aggregate, query)."""

    input_shape: tuple[int, ...]
    kernels: int = 16
    relation_hidden: int = 64
    layout: str = "rows"
    kernel_size: tuple[int, int] = (3, 3)
    pool: tuple[int, int] = (2, 2)

    @property
    def image_shape(self) -> tuple[int, int]:
        """Single-channel 2-D layout fed to the convolution.

        ``rows`` maps (a, b, c) to (a, b*c); ``frames`` stacks transposed
        frames, (a, b, c) to (a*c, b).
        """
        s = tuple(self.input_shape)
        if len(s) == 2:
            return s
        if len(s) != 3:
            raise ShapeError(f"relation network needs 2-D or 3-D instances, got {s}")
        a, b, c = s
        return (a, b * c) if self.layout == "rows" else (a * c, b)

    @property
    def conv_out(self) -> tuple[int, int]:
        H, W = self.image_shape
        kh, kw = self.kernel_size
        return H - kh + 1, W - kw + 1

    @property
    def embed_width(self) -> int:
        h, w = self.conv_out
        return self.kernels * (h // self.pool[0]) * (w // self.pool[1])

    def init(self, rng: np.random.Generator) -> tuple[ParamSet, ParamSet]:
        h, w = self.conv_out
        if h // self.pool[0] < 1 or w // self.pool[1] < 1:
            raise ShapeError(f"input {self.image_shape} too small for conv {self.kernel_size} + pool {self.pool}")
        feat = ParamSet(init_conv(rng, self.kernels, 1, *self.kernel_size, "conv"))
        rel = ParamSet(
            init_dense(rng, 2 * self.embed_width, self.relation_hidden, "rel1")
            + init_dense(rng, self.relation_hidden, 1, "rel2")
        )
        return feat, rel

    def to_images(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != tuple(self.input_shape):
            raise ShapeError(f"inputs of shape {x.shape[1:]} do not match architecture input {self.input_shape}")
        if x.ndim == 4 and self.layout == "frames":
            x = x.transpose(0, 1, 3, 2)
        return x.reshape(len(x), 1, *self.image_shape)

    def embed(self, p: dict[str, Tensor], x: np.ndarray) -> Tensor:
        h = relu(conv2d_forward(self.to_images(x), p["conv.K"], p["conv.b"]))
        h = maxpool2d(crop_to_multiple(h, self.pool), self.pool)
        return h.reshape(len(x), -1)

    def relate(self, p: dict[str, Tensor], pairs: Tensor) -> Tensor:
        h = relu(dense_forward(pairs, p["rel1.W"], p["rel1.b"]))
        return sigmoid(dense_forward(h, p["rel2.W"], p["rel2.b"]))

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "kernels": self.kernels,
            "relation_hidden": self.relation_hidden,
            "layout": self.layout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RNArch":
        return cls(tuple(d["input_shape"]), int(d["kernels"]), int(d["relation_hidden"]), d.get("layout", "rows"))


def check_stratified(support_y: np.ndarray, n_classes: int) -> int:
    """Return K^s, raising DataError unless every class has the same count."""
    counts = np.bincount(np.asarray(support_y, dtype=int), minlength=n_classes)
    if len(counts) != n_classes or counts.min() < 1 or counts.min() != counts.max():
        raise DataError(f"support set is not stratified: per-class counts {counts.tolist()}")
    return int(counts[0])


def aggregate_support(emb: Tensor, support_y: np.ndarray, n_classes: int) -> Tensor:
    """Element-wise sum of the support embeddings of each class -> (n_classes, width)."""
    check_stratified(support_y, n_classes)
    membership = np.eye(n_classes)[np.asarray(support_y, dtype=int)].T  # (C, N)
    return Tensor(membership, op="membership") @ emb


def relation_scores(arch: RNArch, p: dict[str, Tensor], query_emb: Tensor, support_emb: Tensor, support_y: np.ndarray, n_classes: int, aggregation: str = "sum") -> Tensor:
    """Scores in (0, 1) of shape (n_query, n_classes)."""
    if query_emb.shape[1] != support_emb.shape[1] or 2 * query_emb.shape[1] != p["rel1.W"].shape[0]:
        raise ShapeError(
            f"embedding widths {query_emb.shape[1]}/{support_emb.shape[1]} do not fit relation input {p['rel1.W'].shape[0]}"
        )
    nq = query_emb.shape[0]
    if aggregation == "sum":
        agg = aggregate_support(support_emb, support_y, n_classes)
        rows, q_idx = np.tile(np.arange(n_classes), nq), np.repeat(np.arange(nq), n_classes)
        pairs = concat([agg[rows], query_emb[q_idx]], axis=1)
        return arch.relate(p, pairs).reshape(nq, n_classes)
    if aggregation == "max":
        k = check_stratified(support_y, n_classes)
        order = np.argsort(np.asarray(support_y, dtype=int), kind="stable")
        ns = len(order)
        rows, q_idx = np.tile(order, nq), np.repeat(np.arange(nq), ns)
        pairs = concat([support_emb[rows], query_emb[q_idx]], axis=1)
        scores = arch.relate(p, pairs).reshape(nq, n_classes, k)
        return tmax(scores, axis=-1)
    raise ValueError(f"unknown aggregation {aggregation!r}")


@dataclass
class RNModel:
    feature_params: ParamSet
    relation_params: ParamSet
    arch: RNArch
    config: RNConfig
    n_classes: int
    log: list[dict] = field(default_factory=list)
    stop_epoch: int | None = None
    checkpoints: list[tuple[int, ParamSet, ParamSet]] = field(default_factory=list)

    def merged(self) -> ParamSet:
        return ParamSet(list(self.feature_params.items()) + list(self.relation_params.items()))

    def save(self, path: str | Path) -> None:
        doc = {
            "kind": "rn",
            "arch": self.arch.to_dict(),
            "config": self.config.to_dict(),
            "n_classes": self.n_classes,
            "feature_params": self.feature_params.to_dict(),
            "relation_params": self.relation_params.to_dict(),
            "log": self.log,
            "stop_epoch": self.stop_epoch,
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "RNModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("kind") != "rn":
            raise DataError(f"{path} is not a relation-network checkpoint")
        return cls(
            ParamSet.from_dict(doc["feature_params"]),
            ParamSet.from_dict(doc["relation_params"]),
            RNArch.from_dict(doc["arch"]),
            RNConfig(**doc["config"]),
            int(doc["n_classes"]),
            doc.get("log", []),
            doc.get("stop_epoch"),
        )


def _split(merged: ParamSet, feature_keys) -> tuple[ParamSet, ParamSet]:
    f = ParamSet((k, merged[k]) for k in merged if k in feature_keys)
    r = ParamSet((k, merged[k]) for k in merged if k not in feature_keys)
    return f, r


def task_loss_fn(arch: RNArch, cfg: RNConfig, n_classes: int, task: Task):
    """Loss closure over merged (feature + relation) leaves for one task."""
    xs, ys, xq, yq = task.support_x, task.support_y, task.query_x, task.query_y
    target = np.eye(n_classes)[yq]

    def loss(p):
        emb = arch.embed(p, np.concatenate([xs, xq]))
        scores = relation_scores(arch, p, emb[len(xs):], emb[: len(xs)], ys, n_classes, cfg.aggregation)
        if cfg.loss == "mse":
            return mse_loss(scores, target)
        return cce_loss(softmax(scores), target)

    return loss


def score_queries(model: RNModel, support_x: np.ndarray, support_y: np.ndarray, query_x: np.ndarray) -> np.ndarray:
    """Relation scores (n_query, n_classes) without recording a graph."""
    check_stratified(support_y, model.n_classes)
    p = model.merged().constants()
    with no_grad():
        emb_s = model.arch.embed(p, support_x)
        emb_q = model.arch.embed(p, query_x)
        return relation_scores(
            model.arch, p, emb_q, emb_s, support_y, model.n_classes, model.config.aggregation
        ).data


def rn_predict(model: RNModel, support_x: np.ndarray, support_y: np.ndarray, query_x: np.ndarray) -> np.ndarray:
    """Class with the highest relation score per query; ties go to the lowest index."""
    query_x = np.asarray(query_x, dtype=np.float64)
    if query_x.ndim == len(model.arch.input_shape):
        query_x = query_x[None]
    return np.argmax(score_queries(model, support_x, support_y, query_x), axis=1)


def task_accuracy(model: RNModel, task: Task) -> float:
    pred = rn_predict(model, task.support_x, task.support_y, task.query_x)
    return float(np.mean(pred == task.query_y))


def rn_train(ds: PersonDataset, cfg: RNConfig, val_person: str | None = None) -> RNModel:
    """Train feature and relation modules jointly, one Adam step per sampled task.

    An epoch is ``cfg.tasks_per_epoch`` tasks. With early stopping
    enabled, one training person (drawn from the seed
    unless ``val_person`` is given) is held out; ``cfg.val_tasks`` fixed
    tasks drawn from that person are scored after every epoch and training stops once validation accuracy
    has not improved for ``cfg.patience`` epochs. Ties in accuracy are
    broken by the validation loss. The best-scoring parameters are
    returned.
    """
    rng = np.random.default_rng(cfg.seed)
    arch = RNArch(ds.input_shape, cfg.kernels, cfg.relation_hidden, cfg.layout)
    feat, rel = arch.init(rng)
    feature_keys = set(feat)
    params = ParamSet(list(feat.items()) + list(rel.items()))

    train_ds, val_tasks = ds, []
    if cfg.early_stopping and len(ds.person_ids) > 1:
        if val_person is None:
            val_person = ds.person_ids[rng.integers(len(ds.person_ids))]
        train_ds = ds.subset([p for p in ds.person_ids if p != val_person])
        val_rng = np.random.default_rng(cfg.seed + 1)
        val_tasks = [meta_test_task(ds, val_person, cfg.k_support, val_rng) for _ in range(cfg.val_tasks)]

    sampler = TaskSampler(train_ds, cfg.task_config())
    state = AdamState.zeros_like(params)
    model = RNModel(feat, rel, arch, cfg, ds.n_classes)
    val_losses = [task_loss_fn(arch, cfg, ds.n_classes, t) for t in val_tasks]
    best, best_params, since_best = (-1.0, -np.inf), params, 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(cfg.tasks_per_epoch):
            task = sampler.sample()
            try:
                loss, grads = value_and_grad(task_loss_fn(arch, cfg, ds.n_classes, task), params)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}") from exc
            params, state = adam_step(params, grads, state, cfg.alpha)
            losses.append(loss)
        model.feature_params, model.relation_params = _split(params, feature_keys)
        record = {"epoch": epoch, "loss": float(np.mean(losses))}
        if val_tasks:
            acc = float(np.mean([task_accuracy(model, t) for t in val_tasks]))
            with no_grad():
                consts = params.constants()
                vl = float(np.mean([f(consts).data for f in val_losses]))
            record["val_accuracy"], record["val_loss"] = acc, vl
            # accuracy is coarse, so equal accuracy with lower loss counts as progress
            if (acc, -vl) > best:
                best, best_params, since_best = (acc, -vl), params, 0
            else:
                since_best += 1
        model.log.append(record)
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            model.checkpoints.append((epoch, model.feature_params, model.relation_params))
        if val_tasks and since_best >= cfg.patience:
            model.stop_epoch = epoch
            break
    if val_tasks:
        model.feature_params, model.relation_params = _split(best_params, feature_keys)
    return model


def model_from_checkpoint(model: RNModel, checkpoint: tuple[int, ParamSet, ParamSet]) -> RNModel:
    _, f, r = checkpoint
    return RNModel(f, r, model.arch, model.config, model.n_classes)
