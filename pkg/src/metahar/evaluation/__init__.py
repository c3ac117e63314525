"""LOPO evaluation, significance testing, latency and adaptation curves."""

from .curves import CurvePoint, adaptation_curve, read_curve_csv, rn_checkpoint_curve, write_curve_csv
from .lopo import ALGORITHMS, Algorithm, fold_test_task, get_algorithm, lopo_evaluate, sweep
from .reports import EvalReport, SweepReport, accuracy
from .stats import SignificanceResult, wilcoxon_signed_rank
from .timing import LatencyStats, timing_benchmark

__all__ = [
    "ALGORITHMS",
    "Algorithm",
    "CurvePoint",
    "EvalReport",
    "LatencyStats",
    "SignificanceResult",
    "SweepReport",
    "accuracy",
    "adaptation_curve",
    "fold_test_task",
    "get_algorithm",
    "lopo_evaluate",
    "read_curve_csv",
    "rn_checkpoint_curve",
    "sweep",
    "timing_benchmark",
    "wilcoxon_signed_rank",
    "write_curve_csv",
]
