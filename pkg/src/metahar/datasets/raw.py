"""Raw sensor recordings and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError

REQUIRED = ("person_id", "activity_id", "t")


@dataclass(frozen=True)
class RawRecording:
    person_id: str
    activity_id: str
    sample_rate: float
    channels: dict[str, np.ndarray]

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise DataError(f"ragged channels in recording {self.person_id}/{self.activity_id}: {sorted(lengths)}")

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def matrix(self) -> np.ndarray:
        """Channels stacked as (n_channels, n_samples) in column order."""
        return np.stack([self.channels[c] for c in self.channels])


def _infer_rate(t: list[float], where: str) -> float:
    if len(t) < 2:
        # a single sample carries no rate information
        return 1.0
    deltas = np.diff(np.asarray(t))
    if np.any(deltas <= 0):
        bad = int(np.argmax(deltas <= 0)) + 1
        raise DataError(f"{where}: timestamps not strictly increasing at sample {bad}")
    return float(1.0 / np.median(deltas))


def load_csv(path: str | Path) -> list[RawRecording]:
    """Read recordings from a CSV with columns ``person_id, activity_id, t, <channels...>``.

    Each contiguous run of rows sharing (person_id, activity_id) becomes one
    recording; the sample rate is the reciprocal of the median time step.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        chan_names = [h for h in header if h not in REQUIRED]
        if not chan_names:
            raise DataError(f"{path}: no channel columns")
        col = {h: i for i, h in enumerate(header)}

        blocks: list[tuple[str, str, list[float], list[list[float]], int]] = []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{rowno}: expected {len(header)} cells, found {len(row)}")
            pid, aid = row[col["person_id"]].strip(), row[col["activity_id"]].strip()
            try:
                t = float(row[col["t"]])
                vals = [float(row[col[c]]) for c in chan_names]
            except ValueError as exc:
                raise DataError(f"{path}:{rowno}: non-numeric cell ({exc})") from exc
            if not math.isfinite(t) or not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{rowno}: NaN or infinite value")
            if not blocks or blocks[-1][0] != pid or blocks[-1][1] != aid:
                blocks.append((pid, aid, [], [], rowno))
            blocks[-1][2].append(t)
            blocks[-1][3].append(vals)

    recordings = []
    for pid, aid, ts, rows, first_row in blocks:
        rate = _infer_rate(ts, f"{path}:{first_row} ({pid}/{aid})")
        arr = np.asarray(rows, dtype=np.float64)
        channels = {c: arr[:, i].copy() for i, c in enumerate(chan_names)}
        recordings.append(RawRecording(pid, aid, rate, channels))
    return recordings
