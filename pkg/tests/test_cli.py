import csv
import json

import numpy as np
import pytest

from metahar.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, RunConfig, UsageError, main
from metahar.datasets import PersonDataset

TINY = ["--persons", "3", "--classes", "2", "--per-class", "8", "--shape", "5,2,3"]
FAST_MAML = ["--epochs", "20", "--n-tasks", "2", "--hidden", "8", "--k-support", "2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_synth_default_and_determinism(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", tmp_path / "a.jsonl", "--seed", 4)
    assert code == EXIT_OK and "1500 instances (10 persons, 5 classes)" in out
    run(capsys, "synth", "--out", tmp_path / "b.jsonl", "--seed", 4)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    ds = PersonDataset.read_jsonl(tmp_path / "a.jsonl")
    assert ds.min_count() == 30


def test_synth_invalid_spec_names_the_flag(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--out", tmp_path / "a.jsonl", "--persons", 0)
    assert code == EXIT_USAGE and "--persons" in err


def test_preprocess_accelerometer(tmp_path, capsys):
    rng = np.random.default_rng(0)
    rows = ["person_id,activity_id,t,x,y,z"]
    for pid, seconds in (("p0", 7), ("p1", 3)):
        for i in range(seconds * 100):
            rows.append(f"{pid},walk,{i / 100:.2f}," + ",".join(f"{v:.5f}" for v in rng.normal(size=3)))
    (tmp_path / "raw.csv").write_text("\n".join(rows) + "\n")
    code, out, _ = run(capsys, "preprocess", "--input", tmp_path / "raw.csv", "--modality", "accelerometer", "--out", tmp_path / "d.jsonl")
    assert code == EXIT_OK
    assert "2 recordings, 2 windows of shape (5, 3, 60), 1 skipped" in out
    assert PersonDataset.read_jsonl(tmp_path / "d.jsonl").input_shape == (5, 3, 60)


def test_preprocess_errors(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("person_id,activity_id,t,x\np0,a,0,zz\n")
    code, _, err = run(capsys, "preprocess", "--input", tmp_path / "bad.csv", "--modality", "accelerometer", "--out", tmp_path / "d.jsonl")
    assert code == EXIT_DATA and ":2:" in err
    code, _, _ = run(capsys, "preprocess", "--input", tmp_path / "bad.csv", "--modality", "sonar", "--out", tmp_path / "d.jsonl")
    assert code == EXIT_USAGE


def test_train_maml_with_curve_and_config_echo(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", "--algorithm", "maml", "--out", out, "--curve", *TINY, *FAST_MAML)
    assert code == EXIT_OK and "for 20 epochs" in stdout
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["epoch_0010.json", "epoch_0020.json"]
    with open(out / "log.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 20
    echo = json.loads((out / "config.json").read_text())
    assert echo["algorithm"] == "maml" and echo["epochs"] == 20 and echo["persons"] == 3

    # re-running from the echo reproduces the model byte for byte
    again = tmp_path / "again"
    code, _, _ = run(capsys, "train", "--config", out / "config.json", "--out", again)
    assert code == EXIT_OK
    assert (out / "model.json").read_bytes() == (again / "model.json").read_bytes()


def test_flags_override_config_file(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"algorithm": "maml", "epochs": 50, "hidden": 8, "n_tasks": 2, "k_support": 2, **{"persons": 3, "classes": 2, "per_class": 8, "shape": [5, 2, 3]}}))
    code, stdout, _ = run(capsys, "train", "--config", tmp_path / "c.json", "--epochs", 3, "--out", tmp_path / "r")
    assert code == EXIT_OK and "for 3 epochs" in stdout
    code, stdout, _ = run(capsys, "train", "--config", tmp_path / "c.json", "--param", "epochs=2", "--out", tmp_path / "r")
    assert "for 2 epochs" in stdout


def test_train_rn_early_stop(tmp_path, capsys):
    code, stdout, _ = run(
        capsys, "train", "--algorithm", "rn", "--out", tmp_path / "rn", *TINY, "--k-support", 2, "--epochs", 200,
        "--patience", 2, "--alpha", 0.05, "--param", "tasks_per_epoch=2", "--param", "kernels=2",
    )
    assert code == EXIT_OK and "early stop at epoch" in stdout
    model = json.loads((tmp_path / "rn" / "model.json").read_text())
    assert model["stop_epoch"] == len(model["log"]) < 200


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--algorithm", "svm"])
    assert exc.value.code == EXIT_USAGE
    capsys.readouterr()
    code, _, err = run(capsys, "train", "--param", "algorithm=svm", "--out", tmp_path)
    assert code == EXIT_USAGE and "unknown algorithm" in err
    code, _, err = run(capsys, "train", "--param", "bogus=1", "--out", tmp_path)
    assert code == EXIT_USAGE and "bogus" in err
    code, _, _ = run(capsys, "train", "--mode", "sideways", "--out", tmp_path)
    assert code == EXIT_USAGE
    code, _, _ = run(capsys, "train", "--config", tmp_path / "missing.json", "--out", tmp_path)
    assert code == EXIT_USAGE


@pytest.mark.filterwarnings("ignore:overflow")
def test_data_and_numeric_errors(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "r")
    assert code == EXIT_DATA and "does not exist" in err
    code, _, err = run(capsys, "train", "--out", tmp_path / "r", *TINY, *FAST_MAML, "--alpha", 1e300)
    assert code == EXIT_NUMERIC


def test_evaluate_threads_and_curves(tmp_path, capsys):
    base = ["evaluate", "--algorithm", "maml", *TINY, *FAST_MAML, "--folds", 2, "--curve"]
    code, stdout, _ = run(capsys, *base, "--out", tmp_path / "e1")
    assert code == EXIT_OK
    assert sum(line.startswith("fold ") for line in stdout.splitlines()) == 2
    rep = json.loads((tmp_path / "e1" / "report.json").read_text())
    assert rep["persons"] == ["p0", "p1"]
    assert (tmp_path / "e1" / "curves" / "fold_p0.csv").exists() and (tmp_path / "e1" / "curve.csv").exists()
    run(capsys, *base, "--threads", 2, "--out", tmp_path / "e2")
    rep2 = json.loads((tmp_path / "e2" / "report.json").read_text())
    assert rep2["accuracies"] == rep["accuracies"]
    assert (tmp_path / "e1" / "curve.csv").read_bytes() == (tmp_path / "e2" / "curve.csv").read_bytes()


def test_sweep_bench_and_compare(tmp_path, capsys):
    code, stdout, _ = run(capsys, "sweep", "--algorithm", "maml", *TINY, *FAST_MAML, "--folds", 2,
                          "--sweep-param", "k_support", "--grid", "1,2", "--out", tmp_path / "s")
    assert code == EXIT_OK and "k_support=1" in stdout
    sw = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert sw["grid"] == [1, 2] and all(r is not None for r in sw["reports"])
    echo = json.loads((tmp_path / "s" / "config.json").read_text())
    assert echo["sweep_param"] == "k_support" and echo["sweep_grid"] == [1, 2]
    code, _, _ = run(capsys, "sweep", "--config", tmp_path / "s" / "config.json", "--out", tmp_path / "s2")
    assert code == EXIT_OK
    assert (tmp_path / "s" / "sweep.csv").read_text() == (tmp_path / "s2" / "sweep.csv").read_text()
    code, _, err = run(capsys, "sweep", *TINY, "--grid", "1,2", "--out", tmp_path / "s3")
    assert code == EXIT_USAGE and "--sweep-param" in err

    code, _, _ = run(capsys, "bench", *TINY, *FAST_MAML, "--algorithms", "maml,rn", "--shots", "1,2",
                     "--param", "tasks_per_epoch=2", "--param", "kernels=2", "--queries", 2, "--out", tmp_path / "b")
    assert code == EXIT_OK
    with open(tmp_path / "b" / "latency.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["algorithm"], r["k_support"]) for r in rows] == [("maml", "1"), ("maml", "2"), ("rn", "1"), ("rn", "2")]

    run(capsys, "evaluate", *TINY, *FAST_MAML, "--folds", 2, "--out", tmp_path / "e")
    report = tmp_path / "e" / "report.json"
    code, stdout, _ = run(capsys, "compare", report, report, "--out", tmp_path / "cmp.json")
    assert code == EXIT_OK and "p=1" in stdout
    assert json.loads((tmp_path / "cmp.json").read_text())["p_value"] == 1.0

    other = json.loads(report.read_text())
    other["persons"] = ["p0", "p2"]
    (tmp_path / "other.json").write_text(json.dumps(other))
    code, _, _ = run(capsys, "compare", report, tmp_path / "other.json")
    assert code == EXIT_DATA
    code, _, _ = run(capsys, "compare", report, tmp_path / "absent.json")
    assert code == EXIT_DATA


def test_run_config_defaults_and_round_trip():
    rc = RunConfig.from_flat({})
    cfg = rc.learner_config()
    assert (cfg.alpha, cfg.beta, cfg.n_tasks, cfg.gs, cfg.meta_gs, cfg.epochs) == (0.4, 0.001, 32, 5, 10, 100)
    rn = RunConfig.from_flat({"algorithm": "rn"}).learner_config()
    assert (rn.alpha, rn.k_support, rn.epochs) == (0.001, 5, 300)
    mn = RunConfig.from_flat({"algorithm": "matcher"}).learner_config()
    assert (mn.epochs, mn.k_support) == (20, 5)
    flat = RunConfig.from_flat({"algorithm": "rn", "epochs": 7, "persons": 4}).to_flat()
    assert RunConfig.from_flat(flat).to_flat() == flat
    with pytest.raises(UsageError):
        RunConfig.from_flat({"threads": 0})
