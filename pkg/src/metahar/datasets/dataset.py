"""Person-partitioned dataset containers and their JSON-lines format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import DataError


@dataclass(frozen=True, eq=False)
class WindowInstance:
    """One preprocessed window: features plus its activity and person labels.

    Identity (``uid``) is what task construction uses to keep support and
    query disjoint, so two windows with equal features are still distinct.
    """

    features: np.ndarray
    activity_id: str
    person_id: str
    uid: str = ""

    def __post_init__(self):
        arr = np.array(self.features, dtype=np.float64, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "features", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.features.shape


@dataclass(frozen=True)
class PersonDataset:
    """``persons[person_id][activity_id] -> list of WindowInstance``."""

    persons: dict[str, dict[str, list[WindowInstance]]]
    class_set: tuple[str, ...]
    input_shape: tuple[int, ...] = field(default=())

    def __post_init__(self):
        classes = set(self.class_set)
        shape = self.input_shape
        for pid, by_class in self.persons.items():
            for cls, items in by_class.items():
                if cls not in classes:
                    raise DataError(f"person {pid!r} has activity {cls!r} outside the class set")
                if not items:
                    raise DataError(f"person {pid!r} reports activity {cls!r} with no instances")
                for inst in items:
                    if not shape:
                        shape = inst.shape
                    elif inst.shape != shape:
                        raise DataError(f"instance {inst.uid!r} has shape {inst.shape}, expected {shape}")
        object.__setattr__(self, "input_shape", tuple(shape))

    @classmethod
    def from_instances(cls, instances: Iterable[WindowInstance], class_set: Iterable[str] | None = None) -> "PersonDataset":
        persons: dict[str, dict[str, list[WindowInstance]]] = {}
        counters: dict[tuple[str, str], int] = {}
        for inst in instances:
            key = (inst.person_id, inst.activity_id)
            k = counters.get(key, 0)
            counters[key] = k + 1
            if not inst.uid:
                inst = WindowInstance(inst.features, inst.activity_id, inst.person_id, f"{inst.person_id}/{inst.activity_id}/{k}")
            persons.setdefault(inst.person_id, {}).setdefault(inst.activity_id, []).append(inst)
        classes = tuple(class_set) if class_set is not None else tuple(sorted({c for p in persons.values() for c in p}))
        persons = {pid: persons[pid] for pid in sorted(persons)}
        return cls(persons, classes)

    @property
    def person_ids(self) -> list[str]:
        return list(self.persons)

    @property
    def n_classes(self) -> int:
        return len(self.class_set)

    def class_index(self, activity_id: str) -> int:
        return self.class_set.index(activity_id)

    def subset(self, person_ids: Iterable[str]) -> "PersonDataset":
        ids = list(person_ids)
        missing = [p for p in ids if p not in self.persons]
        if missing:
            raise DataError(f"unknown persons {missing}")
        return PersonDataset({p: self.persons[p] for p in ids}, self.class_set, self.input_shape)

    def instances(self) -> Iterator[WindowInstance]:
        for by_class in self.persons.values():
            for cls in self.class_set:
                yield from by_class.get(cls, [])

    def count(self, person_id: str, activity_id: str) -> int:
        return len(self.persons[person_id].get(activity_id, []))

    def min_count(self) -> int:
        """Smallest per-(person, class) instance count over the full grid."""
        return min(self.count(p, c) for p in self.persons for c in self.class_set)

    def __len__(self) -> int:
        return sum(len(v) for by_class in self.persons.values() for v in by_class.values())

    # JSON lines --------------------------------------------------------
    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for inst in self.instances():
                fh.write(json.dumps({
                    "person_id": inst.person_id,
                    "activity_id": inst.activity_id,
                    "shape": list(inst.shape),
                    "features": inst.features.ravel().tolist(),
                }))
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "PersonDataset":
        out = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    feats = np.asarray(rec["features"], dtype=np.float64).reshape(rec["shape"])
                    out.append(WindowInstance(feats, str(rec["activity_id"]), str(rec["person_id"])))
                except (KeyError, ValueError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: malformed instance ({exc})") from exc
                if not np.all(np.isfinite(feats)):
                    raise DataError(f"{path}:{lineno}: non-finite feature value")
        if not out:
            raise DataError(f"{path}: no instances")
        return cls.from_instances(out)
