"""Per-query inference latency."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from ..baselines import MatcherModel, mn_predict
from ..maml import MetaModel, predict, test_adapt
from ..relation_net import RNModel, rn_predict

MIN_REPS = 30


@dataclass(frozen=True)
class LatencyStats:
    n: int
    mean_ms: float | None
    p50_ms: float | None
    p95_ms: float | None
    adapt_ms: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _stats(samples_ns: list[int], adapt_ms: float | None) -> LatencyStats:
    if not samples_ns:
        return LatencyStats(0, None, None, None, adapt_ms)
    ms = np.asarray(samples_ns, dtype=np.float64) / 1e6
    return LatencyStats(len(ms), float(ms.mean()), float(np.percentile(ms, 50)), float(np.percentile(ms, 95)), adapt_ms)


def timing_benchmark(model, support_x, support_y, queries, reps: int = MIN_REPS, warmup: int = 3) -> LatencyStats:
    """Wall-clock time to classify one query, over ``reps`` passes of ``queries``.

    For MAML the support set is used once to adapt (timed separately as
    ``adapt_ms``) and only the adapted network's forward pass is timed. For
    the relation network and the matcher, each query is compared against
    the full support set, which is the cost being measured.
    """
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}, got {reps}")
    queries = np.asarray(queries, dtype=np.float64)
    adapt_ms = None
    if isinstance(model, MetaModel):
        t0 = time.perf_counter_ns()
        adapted = test_adapt(model, support_x, support_y)[-1]
        adapt_ms = (time.perf_counter_ns() - t0) / 1e6

        def classify(q):
            return predict(model.arch, adapted, q)

    elif isinstance(model, RNModel):

        def classify(q):
            return rn_predict(model, support_x, support_y, q)

    elif isinstance(model, MatcherModel):

        def classify(q):
            return mn_predict(model, support_x, support_y, q)

    else:
        raise TypeError(f"cannot benchmark {type(model).__name__}")

    if len(queries) == 0:
        return _stats([], adapt_ms)
    for i in range(warmup):
        classify(queries[i % len(queries)][None])
    samples = []
    for _ in range(reps):
        for q in queries:
            q1 = q[None]
            t0 = time.perf_counter_ns()
            classify(q1)
            samples.append(time.perf_counter_ns() - t0)
    return _stats(samples, adapt_ms)
