import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metahar.autodiff import (
    AdamState,
    KinkError,
    ParamSet,
    Tensor,
    adam_step,
    backward,
    cce_loss,
    concat,
    conv2d_forward,
    crop_to_multiple,
    dense_forward,
    exp,
    grad_check,
    init_conv,
    init_dense,
    log,
    maxpool2d,
    mse_loss,
    no_grad,
    relu,
    sgd_step,
    sigmoid,
    softmax,
    sqrt,
    tmax,
    transpose,
    value_and_grad,
)
from metahar.errors import NumericError, ShapeError

from oracles import conv_loop, dense_loop, maxpool_loop

GRAD_TOL = 1e-4


def _check(builder, seed=0):
    err = grad_check(builder, seed)
    assert err < GRAD_TOL, err


# elementwise and reduction ops ---------------------------------------------

@pytest.mark.parametrize(
    "fn",
    [
        lambda a, b: (a + b).sum(),
        lambda a, b: (a - b * 2.0).sum(),
        lambda a, b: (a * b).mean(),
        lambda a, b: (a / (b * b + 1.0)).sum(),
        lambda a, b: exp(a * 0.3).sum(),
        lambda a, b: log(a * a + 1.0).sum(),
        lambda a, b: sqrt(b * b + 0.5).sum(),
        lambda a, b: sigmoid(a).sum(),
        lambda a, b: (softmax(a) * b).sum(),
        lambda a, b: (a.reshape(-1)[1:4] * 3.0).sum(),
        lambda a, b: (concat([a, b], axis=1) * concat([b, a], axis=1)).sum(),
        lambda a, b: (a @ transpose(b)).sum(),
        lambda a, b: tmax(a, axis=1).sum(),
        lambda a, b: a.sum(axis=0).mean(),
        lambda a, b: (a.mean(axis=1, keepdims=True) * b).sum(),
    ],
    ids=["add", "sub", "mul", "div", "exp", "log", "sqrt", "sigmoid", "softmax", "getitem",
         "concat", "matmul_transpose", "max", "sum_axis", "mean_keepdims"],
)
def test_op_gradients_match_finite_differences(fn):
    def builder(rng):
        params = ParamSet({"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))})
        return (lambda p: fn(p["a"], p["b"])), params

    _check(builder)


def test_broadcast_add_gradient_unbroadcasts():
    def builder(rng):
        params = ParamSet({"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(3,))})
        return (lambda p: ((p["a"] + p["b"]) * (p["a"] + p["b"])).sum()), params

    _check(builder)


def test_repeated_use_accumulates():
    p = ParamSet({"x": np.array([2.0])})
    value, g = value_and_grad(lambda q: (q["x"] * q["x"] * q["x"]).sum(), p)
    assert value == 8.0
    assert g["x"][0] == pytest.approx(12.0)


def test_disconnected_parameter_gets_zero_gradient():
    p = ParamSet({"x": np.ones(2), "unused": np.ones(3)})
    _, g = value_and_grad(lambda q: q["x"].sum(), p)
    np.testing.assert_array_equal(g["unused"], np.zeros(3))


def test_backward_needs_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(t * 2.0)


def test_nonfinite_values_rejected():
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan])
    with pytest.raises(NumericError):
        log(Tensor([0.0]))
    with pytest.raises(NumericError):
        Tensor([1.0]) / Tensor([0.0])


def test_sigmoid_extremes_stay_finite():
    out = sigmoid(Tensor([-800.0, 0.0, 800.0])).data
    assert out[0] == 0.0 and out[1] == 0.5 and out[2] == 1.0


def test_softmax_is_shift_invariant_and_stable():
    x = np.array([[1000.0, 1001.0, 999.0]])
    s = softmax(Tensor(x)).data
    s2 = softmax(Tensor(x - 1000.0)).data
    np.testing.assert_allclose(s, s2, atol=1e-15)
    assert abs(s.sum() - 1.0) < 1e-12


def test_no_grad_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (a * 2.0).sum()
    assert not out.requires_grad and out._parents == ()


# layers ---------------------------------------------------------------------

def test_dense_matches_loop(rng):
    x, W, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)
    np.testing.assert_allclose(dense_forward(Tensor(x), Tensor(W), Tensor(b)).data, dense_loop(x, W, b), atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loop(rng, stride):
    x = rng.normal(size=(2, 2, 7, 9))
    K = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = conv2d_forward(Tensor(x), Tensor(K), Tensor(b), stride=stride).data
    np.testing.assert_allclose(out, conv_loop(x, K, b, stride), atol=1e-12)


def test_maxpool_matches_loop(rng):
    x = rng.normal(size=(2, 3, 4, 6))
    np.testing.assert_allclose(maxpool2d(Tensor(x), (2, 3)).data, maxpool_loop(x, 2, 3), atol=0)


def test_maxpool_gradient_goes_to_first_max():
    x = Tensor(np.array([[[[1.0, 1.0], [0.0, 1.0]]]]), requires_grad=True)
    backward(maxpool2d(x, (2, 2)).sum())
    np.testing.assert_array_equal(x.grad, np.array([[[[1.0, 0.0], [0.0, 0.0]]]]))


def test_layer_gradients():
    def builder(rng):
        params = ParamSet(
            init_conv(rng, 3, 1, 3, 3, "c") + init_dense(rng, 3 * 2 * 2, 4, "d")
        ).map(lambda v: v + rng.normal(scale=0.1, size=v.shape))
        x = rng.normal(size=(2, 1, 6, 6))
        target = np.eye(4)[[0, 2]]

        def loss(p):
            h = relu(conv2d_forward(x, p["c.K"], p["c.b"]))
            h = maxpool2d(h, (2, 2)).reshape(2, -1)
            return cce_loss(softmax(dense_forward(h, p["d.W"], p["d.b"])), target)

        return loss, params

    _check(builder)


def test_layer_shape_errors():
    with pytest.raises(ShapeError):
        dense_forward(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.ones(2)))
    with pytest.raises(ShapeError):
        conv2d_forward(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones(1)))
    with pytest.raises(ShapeError):
        conv2d_forward(Tensor(np.ones((1, 1, 6, 6))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones(1)), stride=2)
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(np.ones((1, 1, 3, 4))), (2, 2))


def test_crop_to_multiple():
    x = Tensor(np.arange(15.0).reshape(1, 1, 3, 5))
    out = crop_to_multiple(x, (2, 2))
    assert out.shape == (1, 1, 2, 4)
    np.testing.assert_array_equal(out.data[0, 0], [[0, 1, 2, 3], [5, 6, 7, 8]])
    assert crop_to_multiple(Tensor(np.ones((1, 1, 4, 4))), (2, 2)).shape == (1, 1, 4, 4)


def test_cce_validates_inputs():
    with pytest.raises(NumericError):
        cce_loss(Tensor([[0.7, 0.7]]), np.array([[1.0, 0.0]]))
    with pytest.raises(ShapeError):
        cce_loss(Tensor([[0.5, 0.5]]), np.array([[0.5, 0.5]]))


def test_cce_of_perfect_prediction_is_zero_and_floor_applies():
    assert cce_loss(Tensor([[1.0, 0.0]]), np.array([[1.0, 0.0]])).item() == 0.0
    # zero probability on the true class is floored, not infinite
    assert cce_loss(Tensor([[0.0, 1.0]]), np.array([[1.0, 0.0]])).item() == pytest.approx(-np.log(1e-12))


def test_mse_value():
    assert mse_loss(Tensor([[1.0, 3.0]]), np.array([[0.0, 1.0]])).item() == pytest.approx(2.5)


def test_kinked_point_is_rejected():
    def builder(rng):
        return (lambda p: relu(p["x"]).sum()), ParamSet({"x": np.zeros(3)})

    with pytest.raises(KinkError):
        grad_check(builder, 0, max_retries=3)


# parameters and optimizers ----------------------------------------------------

def test_paramset_is_immutable_and_copies():
    src = np.ones(3)
    p = ParamSet({"w": src})
    src[0] = 5.0
    assert p["w"][0] == 1.0
    with pytest.raises(ValueError):
        p["w"][0] = 2.0
    with pytest.raises(ValueError):
        ParamSet([("w", np.ones(1)), ("w", np.ones(1))])


def test_paramset_json_round_trip_is_bit_exact(rng):
    p = ParamSet(init_dense(rng, 4, 3, "l"))
    q = ParamSet.from_json(json.loads(json.dumps(p.to_json())))
    assert p.bit_equal(q)


def test_paramset_check_like():
    p = ParamSet({"a": np.ones(2)})
    with pytest.raises(ShapeError):
        p.check_like({"a": np.ones(3)})
    with pytest.raises(ShapeError):
        p.check_like({"b": np.ones(2)})


def test_sgd_step_is_out_of_place():
    p = ParamSet({"w": np.array([1.0, 2.0])})
    q = sgd_step(p, {"w": np.array([1.0, -1.0])}, 0.5)
    np.testing.assert_array_equal(q["w"], [0.5, 2.5])
    np.testing.assert_array_equal(p["w"], [1.0, 2.0])


def test_adam_matches_hand_computation():
    p = ParamSet({"w": np.array([1.0])})
    state = AdamState.zeros_like(p)
    grads = [np.array([0.5]), np.array([-0.2])]
    m = v = 0.0
    w = 1.0
    for t, g in enumerate(grads, start=1):
        p, state = adam_step(p, {"w": g}, state, lr=0.1)
        m = 0.9 * m + 0.1 * g[0]
        v = 0.999 * v + 0.001 * g[0] ** 2
        w -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert p["w"][0] == pytest.approx(w, abs=1e-15)
    assert state.step == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_dense_property(batch, n_in, n_out, seed):
    r = np.random.default_rng(seed)
    x, W, b = r.normal(size=(batch, n_in)), r.normal(size=(n_in, n_out)), r.normal(size=n_out)
    np.testing.assert_allclose(dense_forward(Tensor(x), Tensor(W), Tensor(b)).data, dense_loop(x, W, b), atol=1e-12)
