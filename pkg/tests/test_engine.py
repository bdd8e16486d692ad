import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mipp.engine import (
    FULL_BATCH_ROWS,
    ConfigError,
    Conv2d,
    Dense,
    DivergenceError,
    Flatten,
    MaxPool2d,
    Network,
    Optimizer,
    SgdConfig,
    ShapeError,
    batch_iterator,
    forward_dense,
    grad_check,
    loss_fn,
    make_mlp,
    train_regressor,
)
from tests.oracles import naive_dense

ADAM = SgdConfig(learning_rate=3e-3, momentum=0.9, weight_decay=0.0, batch_size=256, optimizer="adam")


def test_forward_dense_identity_relu():
    out = forward_dense(np.eye(2), np.zeros(2), np.array([[2.0, -3.0]]), "relu")
    np.testing.assert_array_equal(out, [[2.0, 0.0]])


def test_forward_dense_sum_plus_bias():
    out = forward_dense(np.array([[1.0, 1.0]]), np.array([1.0]), np.array([[1.0, 1.0]]), "identity")
    np.testing.assert_array_equal(out, [[3.0]])


def test_forward_dense_shape_errors():
    with pytest.raises(ShapeError):
        forward_dense(np.ones((2, 3)), np.zeros(2), np.ones((1, 2)))
    with pytest.raises(ShapeError):
        forward_dense(np.ones((2, 3)), np.zeros(3), np.ones((1, 3)))


@given(
    n=st.integers(1, 5),
    d=st.integers(1, 6),
    m=st.integers(1, 5),
    act=st.sampled_from(["relu", "identity"]),
    seed=st.integers(0, 2**31),
)
def test_forward_dense_matches_naive(n, d, m, act, seed):
    rng = np.random.default_rng(seed)
    W, b, x = rng.normal(size=(m, d)), rng.normal(size=m), rng.normal(size=(n, d))
    out = forward_dense(W.astype(np.float32), b.astype(np.float32), x.astype(np.float32), act)
    ref = naive_dense(W.astype(np.float32), b.astype(np.float32), x.astype(np.float32), act)
    assert np.abs(out - ref).max() < 1e-5
    assert np.isfinite(out).all()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"learning_rate": 0.0},
        {"momentum": 1.0},
        {"weight_decay": -1.0},
        {"batch_size": 0},
        {"optimizer": "rmsprop"},
    ],
)
def test_sgd_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        SgdConfig(**kwargs)


def test_grad_check_small_probes():
    rng = np.random.default_rng(0)
    for seed in range(5):
        net = make_mlp(3, 2, hidden=(4, 4), seed=seed)
        X, Y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
        assert grad_check(net, X, Y) < 1e-3
        assert grad_check(net, X, rng.integers(0, 2, 6), loss="ce") < 1e-3


def test_grad_check_zero_weights_bias_exact():
    net = make_mlp(2, 2, hidden=(3,), seed=0).astype(np.float64)
    net.params[:] = 0
    X, Y = np.zeros((4, 2)), np.ones((4, 2))
    net.loss_and_grad(X, Y)
    analytic = net.grads.copy()
    for k in range(net.n_params):
        orig = net.params[k]
        net.params[k] = orig + 1e-3
        up = net.loss(X, Y)
        net.params[k] = orig - 1e-3
        down = net.loss(X, Y)
        net.params[k] = orig
        assert abs((up - down) / 2e-3 - analytic[k]) < 1e-6


def test_grad_check_conv_stack():
    rng = np.random.default_rng(3)
    net = Network([Conv2d(2), MaxPool2d(2), Flatten(), Dense(3, "identity")], (1, 4, 4), seed=1)
    X = rng.normal(size=(2, 1, 4, 4))
    assert grad_check(net, X, rng.integers(0, 3, 2), loss="ce") < 1e-3


def test_loss_fn_values():
    pred = np.array([[1.0, 2.0]], dtype=np.float32)
    value, grad = loss_fn(pred, np.array([[0.0, 0.0]], dtype=np.float32), "mse")
    assert value == pytest.approx(2.5)
    np.testing.assert_allclose(grad, [[1.0, 2.0]])
    value, _ = loss_fn(np.zeros((1, 4), dtype=np.float32), np.array([2]), "ce")
    assert value == pytest.approx(np.log(4))


def test_train_identity_target():
    X = np.random.default_rng(0).normal(size=(2048, 8)).astype(np.float32)
    res = train_regressor(make_mlp(8, 8, hidden=(64, 64)), X, X, 500, ADAM)
    assert res.final_loss < 0.01 * X.var(axis=0).mean()
    assert res.final_loss <= res.initial_loss


def test_train_independent_noise():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(2048, 4)), rng.normal(size=(2048, 2))
    res = train_regressor(make_mlp(4, 2, hidden=(32, 32)), X, Y, 300, ADAM)
    net = res.net
    held = rng.normal(size=(2048, 4)), rng.normal(size=(2048, 2))
    assert res.final_loss >= 0.5 * Y.var(axis=0).mean()
    assert net.loss(*held) >= 0.5


def test_train_deterministic():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(1500, 3)), rng.normal(size=(1500, 1))
    a = train_regressor(make_mlp(3, 1, hidden=(8,), seed=4), X, Y, 50, ADAM)
    b = train_regressor(make_mlp(3, 1, hidden=(8,), seed=4), X, Y, 50, ADAM)
    assert a.losses == b.losses
    np.testing.assert_array_equal(a.net.params, b.net.params)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_names_iteration():
    X = np.full((8, 1), 1e3, dtype=np.float32)
    cfg = SgdConfig(learning_rate=1e3, momentum=0.0, weight_decay=0.0)
    with pytest.raises(DivergenceError) as info:
        train_regressor(make_mlp(1, 1, hidden=(4,)), X, X * 1e3, 200, cfg)
    assert info.value.iteration >= 0
    assert "iteration" in str(info.value)


def test_train_rejects_row_mismatch():
    with pytest.raises(ShapeError):
        train_regressor(make_mlp(2, 1, hidden=(2,)), np.zeros((4, 2)), np.zeros((3, 1)), 1, ADAM)


def test_trainable_mask_freezes_parameters():
    net = make_mlp(3, 2, hidden=(4,), seed=0)
    net.trainable = np.ones_like(net.params)
    net.trainable[:5] = 0
    before = net.params[:5].copy()
    rng = np.random.default_rng(0)
    train_regressor(net, rng.normal(size=(32, 3)), rng.normal(size=(32, 2)), 20, ADAM)
    np.testing.assert_array_equal(net.params[:5], before)


def test_optimizer_clone_is_independent():
    net = make_mlp(2, 1, hidden=(3,))
    opt = Optimizer(net, ADAM)
    net.loss_and_grad(np.ones((4, 2), np.float32), np.ones((4, 1), np.float32))
    opt.step()
    other = net.copy()
    twin = opt.clone(other)
    twin.step()
    assert twin.t == 2 and opt.t == 1
    assert twin.net is other


@given(n=st.integers(1, 3000), batch=st.integers(1, 512))
def test_batch_iterator_covers_rows(n, batch):
    it = batch_iterator(n, batch, np.random.default_rng(0))
    first = next(it)
    if n <= FULL_BATCH_ROWS or batch >= n:
        assert first is None
        return
    seen = [first] + [next(it) for _ in range(n // batch - 1)]
    flat = np.concatenate(seen)
    assert len(np.unique(flat)) == len(flat) == (n // batch) * batch


def test_init_range():
    net = make_mlp(16, 4, hidden=(8,), seed=0)
    W = net.layers[0].params[0]
    assert np.abs(W).max() <= np.sqrt(1 / 16) + 1e-7
