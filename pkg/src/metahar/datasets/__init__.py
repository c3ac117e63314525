from .dataset import PersonDataset, WindowInstance
from .preprocess import (
    MODALITIES,
    PreprocessSummary,
    dct_features,
    downsample_frames,
    preprocess,
    resize_frame,
    sliding_window,
    window_count,
)
from .raw import RawRecording, load_csv
from .synthetic import SyntheticSpec, synth_generate

__all__ = [
    "MODALITIES",
    "PersonDataset",
    "PreprocessSummary",
    "RawRecording",
    "SyntheticSpec",
    "WindowInstance",
    "dct_features",
    "downsample_frames",
    "load_csv",
    "preprocess",
    "resize_frame",
    "sliding_window",
    "synth_generate",
    "window_count",
]
