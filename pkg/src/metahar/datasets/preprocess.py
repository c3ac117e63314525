"""Windowing and per-modality feature transforms.

Accelerometer windows become per-second DCT coefficients; depth and
pressure-mat windows are decimated to one frame per second, with depth
frames block-averaged down to 12x16.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.fft import dct

from ..errors import DataError, ShapeError
from .dataset import PersonDataset, WindowInstance
from .raw import RawRecording

WINDOW_S = 5.0
N_DCT = 60


def window_count(n_samples: int, window: int, stride: int) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // stride + 1


def sliding_window(rec: RawRecording, window_s: float = WINDOW_S, overlap_s: float = 3.0) -> list[np.ndarray]:
    """Cut a recording into fixed windows of shape (n_channels, window samples).

    Windows start at 0, stride, 2*stride, ... with ``stride = window_s -
    overlap_s``; a trailing partial window is dropped.
    """
    if not 0 <= overlap_s < window_s:
        raise DataError(f"need 0 <= overlap < window, got overlap={overlap_s}, window={window_s}")
    win = int(round(window_s * rec.sample_rate))
    stride = int(round((window_s - overlap_s) * rec.sample_rate))
    if win < 1 or stride < 1:
        raise DataError(f"window/stride shorter than one sample at {rec.sample_rate} Hz")
    if rec.n_samples < win:
        raise DataError(
            f"recording {rec.person_id}/{rec.activity_id} lasts {rec.duration:.3f}s, shorter than one {window_s}s window"
        )
    data = rec.matrix()
    n = window_count(rec.n_samples, win, stride)
    return [data[:, i * stride:i * stride + win].copy() for i in range(n)]


def dct_features(window: np.ndarray, n_coeff: int = N_DCT, n_slices: int = 5) -> np.ndarray:
    """Orthonormal DCT-II of every one-second slice of every axis.

    ``window`` is (axes, samples) spanning ``n_slices`` seconds. The first
    ``n_coeff`` coefficients of each slice are kept, giving
    (n_slices, axes, n_coeff).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ShapeError(f"expected (axes, samples), got {window.shape}")
    axes, n = window.shape
    if n % n_slices:
        raise ShapeError(f"{n} samples do not split into {n_slices} equal slices")
    per = n // n_slices
    if per < n_coeff:
        raise ShapeError(f"slices of {per} samples are shorter than {n_coeff} coefficients")
    slices = window.reshape(axes, n_slices, per).transpose(1, 0, 2)
    return dct(slices, type=2, norm="ortho", axis=-1)[..., :n_coeff]


def downsample_frames(frames: np.ndarray, rate: float = 15.0) -> np.ndarray:
    """Keep the first frame of every complete second."""
    step = int(round(rate))
    if step < 1:
        raise DataError(f"frame rate {rate} below 1 Hz")
    n_seconds = len(frames) // step
    return np.asarray(frames)[: n_seconds * step : step]


def resize_frame(frame: np.ndarray, out_shape: tuple[int, int] = (12, 16)) -> np.ndarray:
    """Block-mean reduction of a (H, W) frame to ``out_shape``."""
    frame = np.asarray(frame, dtype=np.float64)
    H, W = frame.shape[-2:]
    oh, ow = out_shape
    if H % oh or W % ow:
        raise ShapeError(f"frame {H}x{W} does not reduce evenly to {oh}x{ow}")
    fh, fw = H // oh, W // ow
    lead = frame.shape[:-2]
    return frame.reshape(*lead, oh, fh, ow, fw).mean(axis=(-3, -1))


@dataclass(frozen=True)
class Modality:
    name: str
    frame_shape: tuple[int, ...] | None  # raw per-sample layout for imaging sensors
    resize_to: tuple[int, int] | None
    input_shape: tuple[int, ...]

    def transform(self, window: np.ndarray, rate: float) -> np.ndarray:
        if self.frame_shape is None:
            return dct_features(window)
        frames = window.T.reshape(-1, *self.frame_shape)
        frames = downsample_frames(frames, rate)
        if self.resize_to is not None:
            frames = resize_frame(frames, self.resize_to)
        return frames


MODALITIES = {
    "accelerometer": Modality("accelerometer", None, None, (5, 3, N_DCT)),
    "depth": Modality("depth", (240, 320), (12, 16), (5, 12, 16)),
    "pressure": Modality("pressure", (16, 16), None, (5, 16, 16)),
}


@dataclass
class PreprocessSummary:
    recordings: int = 0
    windows: int = 0
    skipped_short: int = 0


def preprocess(
    recordings: Iterable[RawRecording],
    modality: str,
    overlap_s: float = 3.0,
    window_s: float = WINDOW_S,
) -> tuple[PersonDataset, PreprocessSummary]:
    """Window every recording and apply the modality transform.

    Recordings shorter than one window are skipped and counted.
    """
    try:
        mod = MODALITIES[modality]
    except KeyError:
        raise DataError(f"unknown modality {modality!r}; choose from {sorted(MODALITIES)}") from None
    summary = PreprocessSummary()
    instances = []
    for rec in recordings:
        summary.recordings += 1
        if rec.duration < window_s or rec.n_samples < round(window_s * rec.sample_rate):
            summary.skipped_short += 1
            continue
        if mod.name == "accelerometer":
            expected = mod.input_shape[1]
        else:
            expected = int(np.prod(mod.frame_shape))
        if len(rec.channels) != expected:
            raise DataError(
                f"recording {rec.person_id}/{rec.activity_id}: {mod.name} needs {expected} channels, found {len(rec.channels)}"
            )
        for k, w in enumerate(sliding_window(rec, window_s, overlap_s)):
            try:
                feats = mod.transform(w, rec.sample_rate)
            except (ShapeError, DataError) as exc:
                raise DataError(f"recording {rec.person_id}/{rec.activity_id}, window {k}: {exc}") from exc
            if feats.shape != mod.input_shape:
                raise DataError(
                    f"recording {rec.person_id}/{rec.activity_id}, window {k}: produced {feats.shape}, expected {mod.input_shape}"
                )
            instances.append(WindowInstance(feats, rec.activity_id, rec.person_id))
            summary.windows += 1
    if not instances:
        raise DataError("no windows produced")
    return PersonDataset.from_instances(instances), summary
