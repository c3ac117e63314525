"""Synthetic person-structured data for desk-scale experiments.

Each class has a global template. Every person distorts all templates
with the same affine effect (per-feature scaling plus an offset), so
classes stay separable within one person while a pooled cross-person
classifier degrades as the effect grows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import PersonDataset, WindowInstance


@dataclass(frozen=True)
class SyntheticSpec:
    n_persons: int = 10
    n_classes: int = 5
    instances_per_person_class: int = 30
    feature_shape: tuple[int, ...] = (5, 3, 8)
    person_strength: float = 1.0
    noise: float = 0.3
    seed: int = 0
    amplitude: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "feature_shape", tuple(int(s) for s in self.feature_shape))
        for name in ("n_persons", "n_classes", "instances_per_person_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.feature_shape or any(s < 1 for s in self.feature_shape):
            raise ValueError(f"feature_shape must have positive extents, got {self.feature_shape}")
        if self.person_strength < 0:
            raise ValueError("person_strength must be non-negative")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.amplitude is not None and not self.amplitude > 0:
            raise ValueError("amplitude must be positive when given")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_shape"] = list(self.feature_shape)
        return d


def synth_generate(spec: SyntheticSpec) -> PersonDataset:
    """Draw a :class:`PersonDataset`; bit-deterministic for a fixed spec.

    With ``amplitude`` set, every feature is multiplied by one constant so the
    expected squared norm of an instance is ``amplitude**2``; this keeps the
    gradient scale independent of the dimension, strength and noise.
    """
    rng = np.random.default_rng(spec.seed)
    dim = int(np.prod(spec.feature_shape))
    gain = 1.0
    if spec.amplitude is not None:
        s2 = spec.person_strength**2
        # E|t*scale + offset + noise|^2 per feature: (1 + s^2) + s^2 + noise^2
        gain = spec.amplitude / np.sqrt(dim * (1.0 + 2.0 * s2 + spec.noise**2))
    templates = rng.normal(size=(spec.n_classes, dim))
    width = len(str(max(spec.n_persons, spec.n_classes) - 1))
    class_ids = [f"act{c:0{width}d}" for c in range(spec.n_classes)]
    instances = []
    for p in range(spec.n_persons):
        scale = 1.0 + spec.person_strength * rng.normal(size=dim)
        offset = spec.person_strength * rng.normal(size=dim)
        pid = f"p{p:0{width}d}"
        for c in range(spec.n_classes):
            base = templates[c] * scale + offset
            noise = rng.normal(size=(spec.instances_per_person_class, dim))
            for k in range(spec.instances_per_person_class):
                x = (gain * (base + spec.noise * noise[k])).reshape(spec.feature_shape)
                instances.append(WindowInstance(x, class_ids[c], pid, f"{pid}/{class_ids[c]}/{k}"))
    return PersonDataset.from_instances(instances, class_set=class_ids)
