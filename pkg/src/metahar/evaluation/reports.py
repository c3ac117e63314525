"""Evaluation and sweep reports, serialised as JSON plus flat CSV."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def accuracy(predictions, labels) -> float:
    """Fraction of predictions equal to their labels."""
    predictions = np.asarray(predictions).ravel()
    labels = np.asarray(labels).ravel()
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ValueError(f"need equal-length non-empty inputs, got {predictions.size} and {labels.size}")
    return float(np.mean(predictions == labels))


@dataclass
class EvalReport:
    algorithm: str
    mode: str
    persons: list[str]
    accuracies: list[float]
    seconds: list[float]
    config: dict
    details: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.persons) == len(self.accuracies) == len(self.seconds)):
            raise ValueError("persons, accuracies and seconds must align")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def label(self) -> str:
        return f"{self.algorithm}/{self.mode}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_accuracy"] = self.mean_accuracy
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = {k: v for k, v in d.items() if k != "mean_accuracy"}
        return cls(**d)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def read_json(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "person", "accuracy", "seconds"])
            for i, (p, a, s) in enumerate(zip(self.persons, self.accuracies, self.seconds)):
                w.writerow([i, p, repr(a), repr(s)])


@dataclass
class SweepReport:
    parameter: str
    grid: list
    reports: list[EvalReport | None]
    errors: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.grid) != len(self.reports):
            raise ValueError("one report slot per grid value")
        if list(self.grid) != sorted(set(self.grid)):
            raise ValueError("grid values must be distinct and sorted")

    def mean_accuracies(self) -> list[float | None]:
        return [None if r is None else r.mean_accuracy for r in self.reports]

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "grid": list(self.grid),
            "reports": [None if r is None else r.to_dict() for r in self.reports],
            "errors": dict(self.errors),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        reports = [None if r is None else EvalReport.from_dict(r) for r in d["reports"]]
        return cls(d["parameter"], list(d["grid"]), reports, dict(d.get("errors", {})))

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def read_json(cls, path: str | Path) -> "SweepReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.parameter, "mean_accuracy", "n_folds", "error"])
            for v, r in zip(self.grid, self.reports):
                err = self.errors.get(str(v), "")
                if r is None:
                    w.writerow([v, "", 0, err])
                else:
                    w.writerow([v, repr(r.mean_accuracy), len(r.accuracies), err])
