"""Leave-one-person-out evaluation and hyper-parameter sweeps."""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from ..baselines import MatcherConfig, mn_predict, mn_train
from ..datasets import PersonDataset
from ..episodes import Task, meta_test_task
from ..errors import DataError, MetaHarError
from ..maml import MamlConfig, meta_train, predict, test_adapt
from ..relation_net import RNConfig, rn_predict, rn_train
from .curves import adaptation_curve, rn_checkpoint_curve
from .reports import EvalReport, SweepReport, accuracy


@dataclass(frozen=True)
class Algorithm:
    """How to train one learner on a set of persons and score a test task."""

    name: str
    config_cls: type
    train: Callable[[PersonDataset, Any], Any]
    score: Callable[[Any, Task], dict]


def _maml_score(model, task: Task) -> dict:
    path = test_adapt(model, task.support_x, task.support_y)
    steps = [accuracy(predict(model.arch, p, task.query_x), task.query_y) for p in path]
    detail = {"accuracy": steps[-1], "step_accuracies": steps}
    if model.checkpoints:
        detail["curve"] = [dataclasses.astuple(pt) for pt in adaptation_curve(model, model.checkpoints, task)]
    return detail


def _rn_score(model, task: Task) -> dict:
    acc = accuracy(rn_predict(model, task.support_x, task.support_y, task.query_x), task.query_y)
    detail = {"accuracy": acc, "stop_epoch": model.stop_epoch}
    if model.checkpoints:
        detail["curve"] = [dataclasses.astuple(pt) for pt in rn_checkpoint_curve(model, task)]
    return detail


def _mn_score(model, task: Task) -> dict:
    acc = accuracy(mn_predict(model, task.support_x, task.support_y, task.query_x), task.query_y)
    return {"accuracy": acc, "stop_epoch": model.stop_epoch}


ALGORITHMS: dict[str, Algorithm] = {
    "maml": Algorithm("maml", MamlConfig, meta_train, _maml_score),
    "rn": Algorithm("rn", RNConfig, rn_train, _rn_score),
    "matcher": Algorithm("matcher", MatcherConfig, mn_train, _mn_score),
}


def get_algorithm(name: str) -> Algorithm:
    try:
        return ALGORITHMS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}") from None


def fold_test_task(ds: PersonDataset, person: str, k_support: int, test_seed: int) -> Task:
    """The fixed meta-test task of one fold.

    Seeded by the person's position so every algorithm evaluated with the
    same ``test_seed`` sees the same support and query split.
    """
    idx = ds.person_ids.index(person)
    return meta_test_task(ds, person, k_support, np.random.default_rng([test_seed, idx]))


def _run_fold(algo_name: str, ds: PersonDataset, cfg, person: str, test_seed: int) -> tuple[dict, float]:
    algo = get_algorithm(algo_name)
    t0 = time.perf_counter()
    try:
        train = ds.subset([p for p in ds.person_ids if p != person])
        model = algo.train(train, cfg)
        task = fold_test_task(ds, person, cfg.k_support, test_seed)
        detail = algo.score(model, task)
    except MetaHarError as exc:
        raise type(exc)(f"fold {person}: {exc}") from exc
    return detail, time.perf_counter() - t0


def lopo_evaluate(
    algorithm: str,
    ds: PersonDataset,
    config,
    persons: Sequence[str] | None = None,
    test_seed: int = 0,
    threads: int = 1,
    on_fold: Callable[[str, dict, float], None] | None = None,
) -> EvalReport:
    """Train on all persons but one, test on the held-out person, for each fold.

    ``persons`` restricts the folds (reduced-fold runs); by default every
    person is held out once. Folds are independent and seeded
    deterministically, so ``threads`` changes wall-clock time only.
    """
    algo = get_algorithm(algorithm)
    if not isinstance(config, algo.config_cls):
        raise TypeError(f"{algorithm} needs a {algo.config_cls.__name__}, got {type(config).__name__}")
    if len(ds.person_ids) < 2:
        raise DataError("leave-one-person-out needs at least two persons")
    folds = list(ds.person_ids if persons is None else persons)
    unknown = set(folds) - set(ds.person_ids)
    if unknown:
        raise DataError(f"unknown fold persons {sorted(unknown)}")

    if threads > 1 and len(folds) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_fold, algorithm, ds, config, p, test_seed) for p in folds]
            results = [f.result() for f in futures]
        if on_fold is not None:
            for p, (detail, secs) in zip(folds, results):
                on_fold(p, detail, secs)
    else:
        results = []
        for p in folds:
            detail, secs = _run_fold(algorithm, ds, config, p, test_seed)
            results.append((detail, secs))
            if on_fold is not None:
                on_fold(p, detail, secs)

    cfg_echo = config.to_dict()
    cfg_echo["test_seed"] = test_seed
    return EvalReport(
        algorithm=algorithm,
        mode=config.mode.value,
        persons=folds,
        accuracies=[float(d["accuracy"]) for d, _ in results],
        seconds=[float(s) for _, s in results],
        config=cfg_echo,
        details=[d for d, _ in results],
    )


def sweep(
    algorithm: str,
    ds: PersonDataset,
    config,
    parameter: str,
    grid: Sequence,
    persons: Sequence[str] | None = None,
    test_seed: int = 0,
    threads: int = 1,
    on_value: Callable[[Any, EvalReport | None], None] | None = None,
) -> SweepReport:
    """One LOPO evaluation per grid value of a single config field.

    Every value shares the base seed and test tasks, so differences reflect
    the parameter. A value that fails is recorded and the sweep moves on.
    """
    names = {f.name for f in dataclasses.fields(config)}
    if parameter not in names:
        raise ValueError(f"{type(config).__name__} has no field {parameter!r}")
    values = sorted(set(grid))
    reports: list[EvalReport | None] = []
    errors: dict[str, str] = {}
    for v in values:
        try:
            cfg = dataclasses.replace(config, **{parameter: v})
            rep = lopo_evaluate(algorithm, ds, cfg, persons, test_seed, threads)
        except (MetaHarError, ValueError) as exc:
            rep = None
            errors[str(v)] = str(exc)
        reports.append(rep)
        if on_value is not None:
            on_value(v, rep)
    return SweepReport(parameter, values, reports, errors)
