"""Episodic task construction under the three person-sampling regimes.

``personalised``
    support and query all come from one sampled person.
``person-aware``
    each class's support comes from a single person (classes may differ);
    the query comes from one sampled person, who may or may not be one of
    the support persons.
``conventional``
    person identity is ignored entirely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .datasets import PersonDataset, WindowInstance
from .errors import DataError, TaskError

ALL = "all"


class SamplingMode(str, Enum):
    PERSONALISED = "personalised"
    PERSON_AWARE = "person-aware"
    CONVENTIONAL = "conventional"

    @classmethod
    def parse(cls, value: Union[str, "SamplingMode"]) -> "SamplingMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            raise ValueError(f"unknown sampling mode {value!r}; choose from {[m.value for m in cls]}") from None


@dataclass(frozen=True)
class TaskConfig:
    k_support: int = 5
    k_query: int | str = ALL
    mode: SamplingMode = SamplingMode.PERSONALISED
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplingMode.parse(self.mode))
        if self.k_support < 1:
            raise ValueError(f"k_support must be >= 1, got {self.k_support}")
        if self.k_query != ALL and (not isinstance(self.k_query, (int, np.integer)) or self.k_query < 1):
            raise ValueError(f"k_query must be a positive int or 'all', got {self.k_query!r}")


@dataclass(frozen=True, eq=False)
class Task:
    support: tuple[WindowInstance, ...]
    query: tuple[WindowInstance, ...]
    class_set: tuple[str, ...]
    mode: SamplingMode
    persons: tuple[str, ...] = field(default=())

    @cached_property
    def support_x(self) -> np.ndarray:
        return np.stack([i.features for i in self.support])

    @cached_property
    def support_y(self) -> np.ndarray:
        return np.array([self.class_set.index(i.activity_id) for i in self.support])

    @cached_property
    def query_x(self) -> np.ndarray:
        return np.stack([i.features for i in self.query])

    @cached_property
    def query_y(self) -> np.ndarray:
        return np.array([self.class_set.index(i.activity_id) for i in self.query])

    @property
    def k_support(self) -> int:
        return len(self.support) // len(self.class_set)

    def to_dict(self, seed: int | None = None) -> dict:
        return {
            "mode": self.mode.value,
            "class_set": list(self.class_set),
            "support": [i.uid for i in self.support],
            "query": [i.uid for i in self.query],
            "persons": list(self.persons),
            "seed": seed,
        }

    def dump(self, seed: int | None = None) -> str:
        return json.dumps(self.to_dict(seed))


def lopo_folds(ds: PersonDataset) -> list[tuple[list[str], str]]:
    """One (train persons, held-out person) pair per person, ordered by id."""
    ids = sorted(ds.person_ids)
    if len(ids) < 2:
        raise DataError(f"leave-one-person-out needs at least 2 persons, found {len(ids)}")
    return [([p for p in ids if p != held], held) for held in ids]


def _pick(rng: np.random.Generator, items: Sequence, k: int) -> list:
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[i] for i in idx]


def _query_size(cfg: TaskConfig) -> int | None:
    return None if cfg.k_query == ALL else int(cfg.k_query)


def sample_task(ds: PersonDataset, cfg: TaskConfig, rng: np.random.Generator) -> Task:
    """Draw one task from ``ds`` under ``cfg.mode``.

    Every task covers the full class set with exactly ``k_support`` support
    instances per class; the query is class-balanced with ``k_query`` per
    class, or every remaining instance when ``k_query == 'all'``.
    """
    mode = cfg.mode
    if mode is SamplingMode.PERSONALISED:
        return _personalised(ds, cfg, rng)
    if mode is SamplingMode.PERSON_AWARE:
        return _person_aware(ds, cfg, rng)
    if mode is SamplingMode.CONVENTIONAL:
        return _conventional(ds, cfg, rng)
    raise AssertionError(mode)


def _personalised(ds: PersonDataset, cfg: TaskConfig, rng: np.random.Generator) -> Task:
    ks, kq = cfg.k_support, _query_size(cfg)
    need = ks + (kq if kq is not None else 1)
    eligible = [p for p in ds.person_ids if all(ds.count(p, c) >= need for c in ds.class_set)]
    if not eligible:
        raise TaskError(f"no person has {need} instances in every class (k_support={ks}, k_query={cfg.k_query})")
    person = eligible[rng.integers(len(eligible))]
    support, query = [], []
    for c in ds.class_set:
        pool = ds.persons[person][c]
        n_take = len(pool) if kq is None else ks + kq
        chosen = _pick(rng, pool, n_take)
        support.extend(chosen[:ks])
        query.extend(chosen[ks:])
    return Task(tuple(support), tuple(query), ds.class_set, cfg.mode, (person,))


def _person_aware(ds: PersonDataset, cfg: TaskConfig, rng: np.random.Generator) -> Task:
    ks, kq = cfg.k_support, _query_size(cfg)
    support, support_persons = [], []
    for c in ds.class_set:
        eligible = [p for p in ds.person_ids if ds.count(p, c) >= ks]
        if not eligible:
            raise TaskError(f"no person has {ks} instances of class {c!r}")
        person = eligible[rng.integers(len(eligible))]
        support.extend(_pick(rng, ds.persons[person][c], ks))
        support_persons.append(person)
    used = {i.uid for i in support}

    def remaining(p, c):
        return [i for i in ds.persons[p].get(c, []) if i.uid not in used]

    need = kq if kq is not None else 1
    q_eligible = [p for p in ds.person_ids if all(len(remaining(p, c)) >= need for c in ds.class_set)]
    if not q_eligible:
        raise TaskError(f"no person leaves {need} query instances per class after support selection")
    qp = q_eligible[rng.integers(len(q_eligible))]
    query = []
    for c in ds.class_set:
        pool = remaining(qp, c)
        query.extend(_pick(rng, pool, len(pool) if kq is None else kq))
    persons = tuple(dict.fromkeys(support_persons + [qp]))
    return Task(tuple(support), tuple(query), ds.class_set, cfg.mode, persons)


def _conventional(ds: PersonDataset, cfg: TaskConfig, rng: np.random.Generator) -> Task:
    ks, kq = cfg.k_support, _query_size(cfg)
    if kq is None:
        # "all remaining" is defined per person-activity: K - K^s with K the
        # smallest per-person class count
        kq = ds.min_count() - ks
        if kq < 1:
            raise TaskError(f"k_support={ks} leaves no query instances (smallest person-class count {ds.min_count()})")
    support, query, persons = [], [], []
    for c in ds.class_set:
        pool = [i for p in ds.person_ids for i in ds.persons[p].get(c, [])]
        if len(pool) < ks + kq:
            raise TaskError(f"class {c!r} has {len(pool)} instances, need {ks + kq}")
        chosen = _pick(rng, pool, ks + kq)
        support.extend(chosen[:ks])
        query.extend(chosen[ks:])
        persons.extend(i.person_id for i in chosen)
    return Task(tuple(support), tuple(query), ds.class_set, cfg.mode, tuple(dict.fromkeys(persons)))


class TaskSampler:
    """Stateful sampler; the n-th task depends only on (seed, n)."""

    def __init__(self, ds: PersonDataset, cfg: TaskConfig):
        self.ds = ds
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.calls = 0
        # fail fast on unsatisfiable configurations
        sample_task(ds, cfg, np.random.default_rng(0))

    def sample(self) -> Task:
        self.calls += 1
        return sample_task(self.ds, self.cfg, self.rng)

    def batch(self, n: int) -> list[Task]:
        return [self.sample() for _ in range(n)]


def meta_test_task(ds: PersonDataset, person: str, k_support: int, rng: np.random.Generator) -> Task:
    """Held-out person's task: ``k_support`` per class as support, the rest as query."""
    cfg = TaskConfig(k_support=k_support, k_query=ALL, mode=SamplingMode.PERSONALISED)
    return _personalised(ds.subset([person]), cfg, rng)


def build_rn_instances(task: Task) -> list[tuple[WindowInstance, tuple[WindowInstance, ...]]]:
    """Pair every query instance with the task's full support set."""
    if not task.query:
        raise TaskError("task has an empty query set")
    return [(q, task.support) for q in task.query]
