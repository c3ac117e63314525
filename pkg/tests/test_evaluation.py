import numpy as np
import pytest
from scipy import stats as sps

from metahar.errors import DataError
from metahar.evaluation import (
    CurvePoint,
    EvalReport,
    SweepReport,
    accuracy,
    adaptation_curve,
    fold_test_task,
    get_algorithm,
    lopo_evaluate,
    read_curve_csv,
    sweep,
    timing_benchmark,
    wilcoxon_signed_rank,
    write_curve_csv,
)
from metahar.maml import MamlConfig, meta_train
from metahar.relation_net import RNConfig, rn_train
from metahar.baselines import MatcherConfig, mn_train

from oracles import wilcoxon_brute


# Wilcoxon -----------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 5, 9, 12])
def test_exact_p_matches_enumeration(n, rng):
    for _ in range(10):
        a = rng.integers(0, 6, size=n) / 5.0  # coarse values give ties and zeros
        b = rng.integers(0, 6, size=n) / 5.0
        res = wilcoxon_signed_rank(a, b)
        w, p = wilcoxon_brute(list(a), list(b))
        assert res.statistic == pytest.approx(w)
        assert res.p_value == pytest.approx(p, abs=1e-12)


def test_all_ten_folds_above_gives_2_over_1024():
    res = wilcoxon_signed_rank(np.arange(10) + 1.0, np.zeros(10))
    assert res.statistic == 0.0 and res.method == "exact"
    assert res.p_value == pytest.approx(2 / 1024, abs=1e-15)
    assert res.significant


def test_all_ties_give_p_one():
    res = wilcoxon_signed_rank([0.5, 0.7], [0.5, 0.7])
    assert res.p_value == 1.0 and res.n_effective == 0 and not res.significant


def test_symmetric_case_p_one():
    assert wilcoxon_signed_rank([1.0, 0.0], [0.0, 1.0]).p_value == 1.0


def test_normal_branch_agrees_with_scipy(rng):
    a, b = rng.normal(size=40), rng.normal(0.3, 1, size=40)
    res = wilcoxon_signed_rank(a, b)
    ref = sps.wilcoxon(a, b, method="approx", correction=True)
    assert res.method == "normal"
    assert res.statistic == pytest.approx(ref.statistic)
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_wilcoxon_input_validation():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([], [])


# reports --------------------------------------------------------------------------

def test_accuracy():
    assert accuracy([0, 1, 1], [0, 1, 0]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([0], [0, 1])


def _report(accs=(0.5, 0.75), algorithm="maml", mode="personalised"):
    return EvalReport(algorithm, mode, [f"p{i}" for i in range(len(accs))], list(accs), [1.0] * len(accs), {"seed": 0}, [{}] * len(accs))


def test_eval_report_round_trip(tmp_path):
    rep = _report()
    rep.write_json(tmp_path / "r.json")
    back = EvalReport.read_json(tmp_path / "r.json")
    assert back == rep and back.mean_accuracy == 0.625 and back.label == "maml/personalised"
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "fold,person,accuracy,seconds" and len(lines) == 3


def test_eval_report_validation():
    with pytest.raises(ValueError):
        EvalReport("maml", "personalised", ["p0"], [0.5, 0.5], [1.0], {})
    with pytest.raises(ValueError):
        EvalReport("maml", "personalised", ["p0"], [1.5], [1.0], {})


def test_sweep_report(tmp_path):
    rep = SweepReport("k_support", [1, 3], [_report(), None], {"3": "boom"})
    assert rep.mean_accuracies() == [0.625, None]
    rep.write_json(tmp_path / "s.json")
    back = SweepReport.read_json(tmp_path / "s.json")
    assert back.grid == [1, 3] and back.reports[1] is None and back.errors == {"3": "boom"}
    rep.write_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[2].startswith("3,,0,boom")
    with pytest.raises(ValueError):
        SweepReport("k", [3, 1], [None, None])


# LOPO -------------------------------------------------------------------------------

QUICK = {
    "maml": MamlConfig(epochs=3, n_tasks=2, hidden=8, k_support=2),
    "rn": RNConfig(epochs=2, tasks_per_epoch=2, kernels=2, relation_hidden=8, k_support=2),
    "matcher": MatcherConfig(epochs=2, tasks_per_epoch=2, hidden=8, k_support=2),
}


@pytest.mark.parametrize("algo", sorted(QUICK))
def test_lopo_covers_every_person_once(small_ds, algo):
    rep = lopo_evaluate(algo, small_ds, QUICK[algo])
    assert rep.persons == small_ds.person_ids
    assert len(rep.accuracies) == 4 and all(0 <= a <= 1 for a in rep.accuracies)
    assert rep.config["test_seed"] == 0 and rep.algorithm == algo


def test_lopo_threads_do_not_change_results(small_ds):
    one = lopo_evaluate("maml", small_ds, QUICK["maml"], threads=1)
    two = lopo_evaluate("maml", small_ds, QUICK["maml"], threads=2)
    assert one.accuracies == two.accuracies
    assert [d["step_accuracies"] for d in one.details] == [d["step_accuracies"] for d in two.details]


def test_lopo_validation(small_ds):
    with pytest.raises(TypeError):
        lopo_evaluate("maml", small_ds, QUICK["rn"])
    with pytest.raises(DataError):
        lopo_evaluate("maml", small_ds.subset(["p0"]), QUICK["maml"])
    with pytest.raises(DataError):
        lopo_evaluate("maml", small_ds, QUICK["maml"], persons=["zz"])
    with pytest.raises(ValueError):
        get_algorithm("svm")


def test_fold_test_task_is_shared_across_algorithms(small_ds):
    a = fold_test_task(small_ds, "p2", 2, 5)
    b = fold_test_task(small_ds, "p2", 2, 5)
    assert a.dump() == b.dump() and a.persons == ("p2",)
    assert fold_test_task(small_ds, "p2", 2, 6).dump() != a.dump()


def test_sweep_records_failures(small_ds):
    rep = sweep("maml", small_ds, QUICK["maml"], "k_support", [12, 1, 2], persons=["p0", "p1"])
    assert rep.grid == [1, 2, 12]
    assert rep.reports[0] is not None and rep.reports[2] is None
    assert "12" in rep.errors
    with pytest.raises(ValueError):
        sweep("maml", small_ds, QUICK["maml"], "nope", [1])


# timing ----------------------------------------------------------------------------

def test_timing_benchmark(small_ds):
    task = fold_test_task(small_ds, "p0", 2, 0)
    train = small_ds.subset(["p1", "p2", "p3"])
    maml = meta_train(train, QUICK["maml"])
    stats = timing_benchmark(maml, task.support_x, task.support_y, task.query_x[:3])
    assert stats.n == 90 and stats.adapt_ms is not None and stats.p50_ms <= stats.p95_ms
    rn = rn_train(train, QUICK["rn"])
    assert timing_benchmark(rn, task.support_x, task.support_y, task.query_x[:2]).adapt_ms is None
    mn = mn_train(train, QUICK["matcher"])
    assert timing_benchmark(mn, task.support_x, task.support_y, task.query_x[:1]).n == 30
    empty = timing_benchmark(rn, task.support_x, task.support_y, task.query_x[:0])
    assert empty.n == 0 and empty.mean_ms is None
    with pytest.raises(ValueError):
        timing_benchmark(rn, task.support_x, task.support_y, task.query_x, reps=5)
    with pytest.raises(TypeError):
        timing_benchmark(object(), task.support_x, task.support_y, task.query_x)


# curves ----------------------------------------------------------------------------

def test_adaptation_curve_and_csv(tmp_path, small_ds):
    model = meta_train(small_ds, MamlConfig(epochs=4, n_tasks=2, hidden=8, k_support=2, checkpoint_every=2))
    task = fold_test_task(small_ds, "p0", 2, 0)
    pts = adaptation_curve(model, model.checkpoints, task, meta_gs=3)
    assert [(p.epoch, p.step) for p in pts] == [(e, s) for e in (2, 4) for s in range(4)]
    write_curve_csv(pts, tmp_path / "c.csv")
    assert read_curve_csv(tmp_path / "c.csv") == pts
    with pytest.raises(ValueError):
        adaptation_curve(model, model.checkpoints[::-1], task)


def test_lopo_details_carry_curves(small_ds):
    rep = lopo_evaluate("maml", small_ds, MamlConfig(epochs=4, n_tasks=2, hidden=8, k_support=2, checkpoint_every=2), persons=["p0"])
    curve = [CurvePoint(*c) for c in rep.details[0]["curve"]]
    assert curve[-1].epoch == 4 and curve[-1].step == 10
    # the final checkpoint's last step is the reported accuracy
    assert curve[-1].accuracy == rep.accuracies[0]
