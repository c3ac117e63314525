"""Command-line front end: ``metahar <command> [options]``.

Run settings come from three layers, later ones winning: built-in
defaults, a flat JSON file given with ``--config``, then command-line
flags (named flags and repeated ``--param key=value``). Every run writes
the fully resolved settings to ``<out>/config.json``; passing that file
back with ``--config`` reproduces the run.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .baselines import MatcherConfig, mn_train
from .datasets import MODALITIES, PersonDataset, SyntheticSpec, load_csv, preprocess, synth_generate
from .episodes import SamplingMode
from .errors import DataError, NumericError
from .evaluation import (
    CurvePoint,
    EvalReport,
    fold_test_task,
    get_algorithm,
    lopo_evaluate,
    sweep,
    timing_benchmark,
    wilcoxon_signed_rank,
    write_curve_csv,
)
from .maml import MamlConfig, meta_train
from .relation_net import RNConfig, rn_train

log = logging.getLogger("metahar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

CONFIG_CLASSES = {"maml": MamlConfig, "rn": RNConfig, "matcher": MatcherConfig}

# flat key -> SyntheticSpec field
SYNTH_KEYS = {
    "persons": "n_persons",
    "classes": "n_classes",
    "per_class": "instances_per_person_class",
    "shape": "feature_shape",
    "strength": "person_strength",
    "noise": "noise",
    "amplitude": "amplitude",
    "synth_seed": "seed",
}
RUN_KEYS = {"algorithm", "mode", "data", "out", "seed", "threads", "folds", "test_seed", "curve"}
# settings read by a single command (sweep grid, benchmark matrix)
COMMAND_KEYS = {"sweep_param", "sweep_grid", "bench_algorithms", "bench_shots", "bench_reps", "bench_queries"}
COMMAND_DEFAULTS = {"bench_algorithms": ["maml", "rn"], "bench_shots": [1, 5], "bench_reps": 30, "bench_queries": 20}


class UsageError(Exception):
    pass


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_shape(value) -> tuple[int, ...]:
    if isinstance(value, str):
        value = [v for v in value.replace("x", ",").split(",") if v.strip()]
    try:
        return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise UsageError(f"--shape: cannot parse {value!r} as a list of integers") from None


LIST_KEYS = {"sweep_grid", "bench_algorithms", "bench_shots"}


def _parse_grid(text: str) -> list:
    return [_parse_value(v.strip()) for v in text.split(",") if v.strip()]


@dataclass
class RunConfig:
    algorithm: str = "maml"
    mode: str = SamplingMode.PERSONALISED.value
    data: str | None = None
    out: str = "runs"
    seed: int = 0
    threads: int = 1
    folds: int | None = None
    test_seed: int = 0
    curve: bool = False
    learner: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    command: dict = field(default_factory=dict)

    @classmethod
    def from_flat(cls, flat: dict, algorithms: Sequence[str] | None = None) -> "RunConfig":
        """Split flat settings into run, synthetic-data and learner keys.

        Learner keys are checked against ``algorithms`` (default: the run's
        own algorithm); a key valid for any of them is accepted.
        """
        run, learner, synth, command = {}, {}, {}, {}
        algorithm = flat.get("algorithm", cls.algorithm)
        names = [algorithm] if algorithms is None else list(algorithms)
        for name in names:
            if name not in CONFIG_CLASSES:
                raise UsageError(f"--algorithm: unknown algorithm {name!r}; choose from {sorted(CONFIG_CLASSES)}")
        allowed = {f.name for n in names for f in dataclasses.fields(CONFIG_CLASSES[n])} - {"mode", "seed"}
        for key, value in flat.items():
            if key in RUN_KEYS:
                run[key] = value
            elif key in SYNTH_KEYS:
                synth[key] = value
            elif key in COMMAND_KEYS:
                command[key] = value
            elif key in allowed:
                learner[key] = value
            else:
                raise UsageError(f"unknown setting {key!r} for algorithm {'/'.join(names)}")
        cfg = cls(**run, learner=learner, synth=synth, command=command)
        try:
            cfg.mode = SamplingMode.parse(cfg.mode).value
        except ValueError as exc:
            raise UsageError(f"--mode: {exc}") from None
        if not isinstance(cfg.threads, int) or cfg.threads < 1:
            raise UsageError("--threads must be a positive integer")
        return cfg

    def to_flat(self) -> dict:
        d = {k: getattr(self, k) for k in sorted(RUN_KEYS)}
        d.update(self.synth)
        d.update(self.learner)
        d.update(self.command)
        return d

    def setting(self, key: str):
        """A command-specific setting, falling back to its default."""
        if key in self.command:
            return self.command[key]
        if key in COMMAND_DEFAULTS:
            return COMMAND_DEFAULTS[key]
        raise UsageError(f"missing required setting --{key.replace('_', '-')}")

    def learner_config(self, **overrides):
        cls = CONFIG_CLASSES[self.algorithm]
        kwargs = dict(self.learner, mode=self.mode, seed=self.seed)
        kwargs.update(overrides)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid {self.algorithm} settings: {exc}") from None

    def synth_spec(self) -> SyntheticSpec:
        return build_synth_spec(self.synth)

    def dataset(self) -> PersonDataset:
        if self.data:
            return read_dataset(self.data)
        return synth_generate(self.synth_spec())


def build_synth_spec(flat: dict) -> SyntheticSpec:
    kwargs = {}
    for key, value in flat.items():
        if key == "shape":
            value = _parse_shape(value)
        kwargs[SYNTH_KEYS[key]] = value
    try:
        return SyntheticSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        # name the flag rather than the internal field
        msg = str(exc)
        for flag, name in SYNTH_KEYS.items():
            msg = msg.replace(name, "--" + flag.replace("_", "-"))
        raise UsageError(msg) from None


def read_dataset(path: str) -> PersonDataset:
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset file {path} does not exist")
    return PersonDataset.read_jsonl(p)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


# flags ----------------------------------------------------------------------

LEARNER_FLAGS = {
    "alpha": float,
    "beta": float,
    "epochs": int,
    "k_support": int,
    "gs": int,
    "meta_gs": int,
    "n_tasks": int,
    "hidden": int,
    "patience": int,
}
SYNTH_FLAGS = {
    "persons": int,
    "classes": int,
    "per_class": int,
    "shape": str,
    "strength": float,
    "noise": float,
    "amplitude": float,
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON settings file; flags override it")
    p.add_argument("--algorithm", choices=sorted(CONFIG_CLASSES))
    p.add_argument("--mode", help="personalised | person-aware | conventional")
    p.add_argument("--data", help="JSON-lines dataset; a synthetic one is generated when omitted")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker processes for independent folds")
    p.add_argument("--folds", type=int, help="evaluate only the first N persons as folds")
    p.add_argument("--test-seed", type=int, dest="test_seed")
    p.add_argument("--curve", action="store_true", default=None, help="record checkpoints every 10 epochs and accuracy curves")
    for name, typ in LEARNER_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    for name, typ in SYNTH_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--synth-seed", dest="synth_seed", type=int)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="any other setting, value parsed as JSON")


def _flat_from_args(args: argparse.Namespace) -> dict:
    flat: dict = {}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"--config: {args.config} does not exist") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config: {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("--config must hold a flat JSON object")
        flat.update(loaded)
    names = RUN_KEYS | COMMAND_KEYS | set(LEARNER_FLAGS) | set(SYNTH_FLAGS) | {"synth_seed"}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            flat[name] = _parse_grid(value) if name in LIST_KEYS and isinstance(value, str) else value
    for item in args.param:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        flat[key.strip()] = _parse_value(value)
    return flat


# commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    flat = {k: getattr(args, k) for k in SYNTH_FLAGS if getattr(args, k) is not None}
    if args.seed is not None:
        flat["synth_seed"] = args.seed
    spec = build_synth_spec(flat)
    ds = synth_generate(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ds.write_jsonl(args.out)
    print(f"wrote {len(ds)} instances ({len(ds.person_ids)} persons, {ds.n_classes} classes) to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    if args.modality not in MODALITIES:
        raise UsageError(f"--modality: choose from {sorted(MODALITIES)}")
    recordings = load_csv(args.input)
    ds, summary = preprocess(recordings, args.modality, overlap_s=args.overlap, window_s=args.window)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ds.write_jsonl(args.out)
    print(
        f"{summary.recordings} recordings, {summary.windows} windows of shape {ds.input_shape}, "
        f"{summary.skipped_short} skipped as shorter than one window; wrote {args.out}"
    )
    if summary.skipped_short:
        log.warning("%d recordings skipped as shorter than %.1f s", summary.skipped_short, args.window)
    return EXIT_OK


def _train(run: RunConfig, ds: PersonDataset):
    overrides = {"checkpoint_every": 10} if run.curve and run.algorithm in ("maml", "rn") else {}
    cfg = run.learner_config(**overrides)
    if run.algorithm == "maml":
        return meta_train(ds, cfg)
    if run.algorithm == "rn":
        return rn_train(ds, cfg)
    return mn_train(ds, cfg)


def cmd_train(args) -> int:
    run = RunConfig.from_flat(_flat_from_args(args))
    ds = run.dataset()
    out = _out_dir(run.out)
    _write_json(out / "config.json", run.to_flat())
    model = _train(run, ds)
    model.save(out / "model.json")
    with open(out / "log.csv", "w", newline="") as fh:
        cols = sorted({k for r in model.log for k in r}, key=lambda k: (k != "epoch", k))
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(model.log)
    ckpts = getattr(model, "checkpoints", [])
    if ckpts:
        ck_dir = _out_dir(out / "checkpoints")
        for ck in ckpts:
            epoch = ck[0]
            if run.algorithm == "maml":
                doc = {"epoch": epoch, "params": ck[1].to_dict()}
            else:
                doc = {"epoch": epoch, "feature_params": ck[1].to_dict(), "relation_params": ck[2].to_dict()}
            _write_json(ck_dir / f"epoch_{epoch:04d}.json", doc)
    stop = getattr(model, "stop_epoch", None)
    last = model.log[-1] if model.log else {}
    print(
        f"trained {run.algorithm}/{run.mode} on {len(ds.person_ids)} persons for {len(model.log)} epochs"
        + (f" (early stop at epoch {stop})" if stop else "")
        + (f", final loss {last.get('meta_loss', last.get('loss')):.4f}" if last else "")
        + f"; wrote {out / 'model.json'}"
    )
    return EXIT_OK


def _fold_line(person: str, detail: dict, secs: float) -> None:
    print(f"fold {person}: accuracy {detail['accuracy']:.4f} ({secs:.1f}s)", flush=True)


def _write_curves(out: Path, report: EvalReport) -> None:
    curves = [d.get("curve") for d in report.details]
    if not any(curves):
        return
    cdir = _out_dir(out / "curves")
    for person, curve in zip(report.persons, curves):
        if curve:
            write_curve_csv([CurvePoint(*c) for c in curve], cdir / f"fold_{person}.csv")
    keys = sorted({(c[0], c[1]) for curve in curves if curve for c in curve})
    mean = []
    for key in keys:
        vals = [c[2] for curve in curves if curve for c in curve if (c[0], c[1]) == key]
        mean.append(CurvePoint(key[0], key[1], float(np.mean(vals))))
    write_curve_csv(mean, out / "curve.csv")


def _persons(run: RunConfig, ds: PersonDataset):
    if run.folds is None:
        return None
    if not 1 <= run.folds <= len(ds.person_ids):
        raise UsageError(f"--folds must be between 1 and {len(ds.person_ids)}")
    return ds.person_ids[: run.folds]


def cmd_evaluate(args) -> int:
    run = RunConfig.from_flat(_flat_from_args(args))
    ds = run.dataset()
    out = _out_dir(run.out)
    _write_json(out / "config.json", run.to_flat())
    overrides = {"checkpoint_every": 10} if run.curve and run.algorithm in ("maml", "rn") else {}
    cfg = run.learner_config(**overrides)
    report = lopo_evaluate(run.algorithm, ds, cfg, _persons(run, ds), run.test_seed, run.threads, on_fold=_fold_line)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    _write_curves(out, report)
    print(f"{report.label}: mean accuracy {report.mean_accuracy:.4f} over {len(report.accuracies)} folds")
    return EXIT_OK


def cmd_sweep(args) -> int:
    run = RunConfig.from_flat(_flat_from_args(args))
    param, grid = run.setting("sweep_param"), run.setting("sweep_grid")
    cfg = run.learner_config()
    if not hasattr(cfg, param):
        raise UsageError(f"--sweep-param: {run.algorithm} has no setting {param!r}")
    if not isinstance(grid, list) or not grid:
        raise UsageError("--grid: give at least one value")
    ds = run.dataset()
    out = _out_dir(run.out)
    _write_json(out / "config.json", run.to_flat())

    def on_value(v, rep):
        if rep is None:
            print(f"{param}={v}: failed", flush=True)
        else:
            print(f"{param}={v}: mean accuracy {rep.mean_accuracy:.4f}", flush=True)

    rep = sweep(run.algorithm, ds, cfg, param, grid, _persons(run, ds), run.test_seed, run.threads, on_value)
    rep.write_json(out / "sweep.json")
    rep.write_csv(out / "sweep.csv")
    return EXIT_OK


def cmd_bench(args) -> int:
    flat = _flat_from_args(args)
    algorithms = flat.get("bench_algorithms", COMMAND_DEFAULTS["bench_algorithms"])
    if not isinstance(algorithms, list) or not algorithms:
        raise UsageError("--algorithms: give at least one algorithm")
    run = RunConfig.from_flat(flat, algorithms)
    try:
        shots = [int(k) for k in run.setting("bench_shots")]
    except (TypeError, ValueError):
        raise UsageError("--shots must be a comma-separated list of integers") from None
    reps, n_queries = run.setting("bench_reps"), run.setting("bench_queries")
    ds = run.dataset()
    out = _out_dir(run.out)
    _write_json(out / "config.json", run.to_flat())
    held, train_ids = ds.person_ids[0], ds.person_ids[1:]
    train = ds.subset(train_ids)
    rows = []
    for algo in algorithms:
        for k in shots:
            cls = CONFIG_CLASSES[algo]
            names = {f.name for f in dataclasses.fields(cls)}
            kwargs = {key: v for key, v in run.learner.items() if key in names}
            cfg = cls(**{**kwargs, "mode": run.mode, "seed": run.seed, "k_support": k})
            model = get_algorithm(algo).train(train, cfg)
            task = fold_test_task(ds, held, k, run.test_seed)
            try:
                stats = timing_benchmark(model, task.support_x, task.support_y, task.query_x[:n_queries], reps=reps)
            except ValueError as exc:
                raise UsageError(f"--reps: {exc}") from None
            rows.append({"algorithm": algo, "k_support": k, **stats.to_dict()})
            print(f"{algo} K^s={k}: mean {stats.mean_ms:.4f} ms, p95 {stats.p95_ms:.4f} ms per query", flush=True)
    with open(out / "latency.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def cmd_compare(args) -> int:
    reports = []
    for path in (args.report_a, args.report_b):
        try:
            reports.append(EvalReport.read_json(path))
        except FileNotFoundError:
            raise DataError(f"report {path} does not exist") from None
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path} is not an evaluation report: {exc}") from None
    a, b = reports
    if a.persons != b.persons:
        raise DataError("reports cover different fold persons and cannot be paired")
    res = wilcoxon_signed_rank(a.accuracies, b.accuracies)
    doc = {"a": a.label, "b": b.label, "mean_a": a.mean_accuracy, "mean_b": b.mean_accuracy, **res.to_dict()}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out), doc)
    print(
        f"{a.label} {a.mean_accuracy:.4f} vs {b.label} {b.mean_accuracy:.4f}: "
        f"W={res.statistic:g}, p={res.p_value:.4g} ({res.method}, n={res.n_effective}), "
        f"{'significant' if res.significant else 'not significant'} at 95%"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metahar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic person-structured dataset")
    for name, typ in SYNTH_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output JSON-lines file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="window and featurise a raw sensor CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--modality", required=True, help=", ".join(sorted(MODALITIES)))
    p.add_argument("--overlap", type=float, default=3.0, help="window overlap in seconds")
    p.add_argument("--window", type=float, default=5.0, help="window length in seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model on every person in the dataset")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="leave-one-person-out evaluation")
    _add_run_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="LOPO evaluation over a grid of one setting")
    _add_run_flags(p)
    p.add_argument("--sweep-param", dest="sweep_param", help="learner setting to vary")
    p.add_argument("--grid", dest="sweep_grid", help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="per-query inference latency")
    _add_run_flags(p)
    p.add_argument("--algorithms", dest="bench_algorithms", help="comma-separated, default maml,rn")
    p.add_argument("--shots", dest="bench_shots", help="comma-separated K^s values, default 1,5")
    p.add_argument("--reps", dest="bench_reps", type=int, help="timed passes over the queries, default 30")
    p.add_argument("--queries", dest="bench_queries", type=int, help="queries per pass, default 20")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="Wilcoxon signed-rank test between two reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
