import numpy as np
import pytest

from metahar.autodiff import ParamSet, Tensor, cce_loss, grad_check
from metahar.baselines import (
    MatcherConfig,
    MatcherModel,
    class_probs,
    cosine_matrix,
    embed,
    mn_predict,
    mn_probs,
    mn_train,
)
from metahar.episodes import TaskConfig, meta_test_task, sample_task
from metahar.errors import DataError


def test_cosine_matrix_matches_definition(rng):
    q, s = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    ref = np.array([[a @ b / np.linalg.norm(a) / np.linalg.norm(b) for b in s] for a in q])
    np.testing.assert_allclose(cosine_matrix(Tensor(q), Tensor(s)).data, ref, atol=1e-12)


def test_zero_embedding_is_finite():
    out = cosine_matrix(Tensor(np.zeros((1, 3))), Tensor(np.ones((2, 3)))).data
    np.testing.assert_array_equal(out, 0.0)


def test_class_probs_sum_attention_per_class(rng):
    q, s = rng.normal(size=(2, 4)), rng.normal(size=(4, 4))
    ys = np.array([1, 0, 1, 0])
    probs = class_probs(Tensor(q), Tensor(s), ys, 2, temperature=2.0).data
    cos = cosine_matrix(Tensor(q), Tensor(s)).data * 2.0
    attn = np.exp(cos) / np.exp(cos).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs[:, 0], attn[:, [1, 3]].sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_loss_gradient(small_ds):
    task = sample_task(small_ds, TaskConfig(2, 1, "personalised"), np.random.default_rng(0))
    xs = task.support_x.reshape(len(task.support), -1)
    xq = task.query_x.reshape(len(task.query), -1)
    target = np.eye(3)[task.query_y]

    def builder(rng):
        p = ParamSet({"embed.W": rng.normal(size=(xs.shape[1], 6)), "embed.b": rng.normal(size=6)})
        return (lambda p: cce_loss(class_probs(embed(p, xq), embed(p, xs), task.support_y, 3), target)), p

    assert grad_check(builder, 0) < 1e-4


def _quick(**kw):
    base = dict(epochs=5, tasks_per_epoch=4, hidden=16, k_support=2)
    base.update(kw)
    return MatcherConfig(**base)


def test_training_is_deterministic(small_ds):
    a, b = mn_train(small_ds, _quick()), mn_train(small_ds, _quick())
    assert a.params.bit_equal(b.params)
    assert all("val_accuracy" in r for r in a.log)


def test_personalised_matcher_learns(mid_ds):
    train = mid_ds.subset(mid_ds.person_ids[1:])
    model = mn_train(train, MatcherConfig(k_support=5))
    task = meta_test_task(mid_ds, mid_ds.person_ids[0], 5, np.random.default_rng(0))
    acc = np.mean(mn_predict(model, task.support_x, task.support_y, task.query_x) == task.query_y)
    assert acc > 1.5 / mid_ds.n_classes


def test_predict_shapes_and_validation(small_ds):
    model = mn_train(small_ds, _quick(epochs=1))
    task = meta_test_task(small_ds, "p1", 2, np.random.default_rng(0))
    probs = mn_probs(model, task.support_x, task.support_y, task.query_x)
    assert probs.shape == (len(task.query), 3)
    assert mn_predict(model, task.support_x, task.support_y, task.query_x[0]).shape == (1,)
    with pytest.raises(DataError):
        mn_predict(model, task.support_x[:-1], task.support_y[:-1], task.query_x)


def test_early_stopping(small_ds):
    model = mn_train(small_ds, _quick(epochs=50, patience=2, lr=0.05))
    assert model.stop_epoch is not None and len(model.log) == model.stop_epoch
    assert mn_train(small_ds, _quick(early_stopping=False)).stop_epoch is None


def test_save_load_round_trip(tmp_path, small_ds):
    model = mn_train(small_ds, _quick(epochs=1))
    model.save(tmp_path / "mn.json")
    back = MatcherModel.load(tmp_path / "mn.json")
    assert back.params.bit_equal(model.params) and back.config == model.config
    (tmp_path / "x.json").write_text('{"kind": "rn"}')
    with pytest.raises(DataError):
        MatcherModel.load(tmp_path / "x.json")


@pytest.mark.parametrize("kwargs", [{"lr": 0}, {"temperature": 0}, {"epochs": 0}, {"val_tasks": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        MatcherConfig(**kwargs)


def test_defaults():
    d = MatcherConfig()
    assert (d.epochs, d.k_support) == (20, 5)
