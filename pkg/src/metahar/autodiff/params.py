"""Immutable, ordered collections of named parameter arrays."""

from __future__ import annotations

import json
from collections.abc import Mapping
from typing import Callable, Iterable, Iterator

import numpy as np

from ..errors import NumericError, ShapeError
from .tensor import Tensor


def _frozen(arr) -> np.ndarray:
    a = np.array(arr, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


class ParamSet(Mapping):
    """Ordered map ``name -> float64 array``.

    Arrays are copied on construction and marked read-only, so a ParamSet can
    be shared freely; every update produces a new instance.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        store: dict[str, np.ndarray] = {}
        for name, arr in items:
            if name in store:
                raise ValueError(f"duplicate parameter name {name!r}")
            store[name] = _frozen(arr)
        self._entries = store

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}: {v.shape}" for k, v in self._entries.items())
        return f"ParamSet({inner})"

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    def num_values(self) -> int:
        return sum(v.size for v in self._entries.values())

    def check_like(self, other: Mapping[str, np.ndarray]) -> None:
        """Raise ShapeError unless ``other`` has the same keys, order and shapes."""
        if list(self.keys()) != list(other.keys()):
            raise ShapeError(f"parameter keys differ: {list(self.keys())} vs {list(other.keys())}")
        for k, v in self._entries.items():
            if np.shape(other[k]) != v.shape:
                raise ShapeError(f"shape of {k!r} differs: {v.shape} vs {np.shape(other[k])}")

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet((k, fn(v)) for k, v in self._entries.items())

    def zip_map(self, other: Mapping[str, np.ndarray], fn) -> "ParamSet":
        self.check_like(other)
        return ParamSet((k, fn(v, np.asarray(other[k]))) for k, v in self._entries.items())

    def zeros_like(self) -> "ParamSet":
        return self.map(np.zeros_like)

    def leaves(self) -> dict[str, Tensor]:
        """Fresh gradient-tracked leaf tensors, one per entry."""
        return {k: Tensor(v, requires_grad=True, op=k) for k, v in self._entries.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v, op=k) for k, v in self._entries.items()}

    def bit_equal(self, other: "ParamSet") -> bool:
        if list(self.keys()) != list(other.keys()):
            return False
        return all(
            v.shape == other[k].shape and v.tobytes() == other[k].tobytes()
            for k, v in self._entries.items()
        )

    def max_abs_diff(self, other: Mapping[str, np.ndarray]) -> float:
        self.check_like(other)
        return max((float(np.max(np.abs(v - other[k]), initial=0.0)) for k, v in self._entries.items()), default=0.0)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self._entries.values()]) if self._entries else np.zeros(0)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        for k, v in self._entries.items():
            if not np.all(np.isfinite(v)):
                raise NumericError(f"cannot serialize non-finite parameter {k!r}")
        return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self._entries.items()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ParamSet":
        out = []
        for k, blob in doc.items():
            shape = tuple(int(s) for s in blob["shape"])
            data = np.asarray(blob["data"], dtype=np.float64)
            if data.size != int(np.prod(shape)):
                raise ShapeError(f"{k!r}: {data.size} values for shape {shape}")
            out.append((k, data.reshape(shape)))
        return cls(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ParamSet":
        return cls.from_dict(json.loads(text))


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_dense(rng: np.random.Generator, n_in: int, n_out: int, prefix: str) -> list[tuple[str, np.ndarray]]:
    return [
        (f"{prefix}.W", glorot_uniform(rng, (n_in, n_out), n_in, n_out)),
        (f"{prefix}.b", np.zeros(n_out)),
    ]


def init_conv(rng: np.random.Generator, n: int, ch: int, kh: int, kw: int, prefix: str) -> list[tuple[str, np.ndarray]]:
    return [
        (f"{prefix}.K", glorot_uniform(rng, (n, ch, kh, kw), ch * kh * kw, n * kh * kw)),
        (f"{prefix}.b", np.zeros(n)),
    ]
