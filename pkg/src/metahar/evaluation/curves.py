"""Accuracy-versus-adaptation-step curves over training checkpoints."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..autodiff import ParamSet
from ..episodes import Task
from ..errors import ShapeError
from ..maml import MetaModel, predict, test_adapt
from ..relation_net import RNModel, model_from_checkpoint, task_accuracy
from .reports import accuracy


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    step: int
    accuracy: float


def adaptation_curve(
    model: MetaModel,
    checkpoints: Sequence[tuple[int, ParamSet]],
    task: Task,
    alpha: float | None = None,
    meta_gs: int | None = None,
) -> list[CurvePoint]:
    """Query accuracy after 0..meta_gs adaptation steps from each checkpoint."""
    epochs = [e for e, _ in checkpoints]
    if epochs != sorted(epochs):
        raise ValueError("checkpoints must be ordered by epoch")
    points = []
    for epoch, params in checkpoints:
        try:
            model.arch.check(params)
        except ShapeError as exc:
            raise ShapeError(f"checkpoint at epoch {epoch}: {exc}") from exc
        path = test_adapt(model, task.support_x, task.support_y, alpha, meta_gs, params=params)
        for step, p in enumerate(path):
            points.append(CurvePoint(epoch, step, accuracy(predict(model.arch, p, task.query_x), task.query_y)))
    return points


def rn_checkpoint_curve(model: RNModel, task: Task) -> list[CurvePoint]:
    """Relation-network accuracy per checkpoint (no adaptation, step 0)."""
    epochs = [c[0] for c in model.checkpoints]
    if epochs != sorted(epochs):
        raise ValueError("checkpoints must be ordered by epoch")
    return [CurvePoint(c[0], 0, task_accuracy(model_from_checkpoint(model, c), task)) for c in model.checkpoints]


def write_curve_csv(points: Sequence[CurvePoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "accuracy"])
        for pt in points:
            w.writerow([pt.epoch, pt.step, repr(pt.accuracy)])


def read_curve_csv(path: str | Path) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(int(r["epoch"]), int(r["step"]), float(r["accuracy"])) for r in rows]
