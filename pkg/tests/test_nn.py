import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hwprune.data_io import Dataset, synth_classify
from hwprune.errors import DimensionError, NumericError, UsageError
from hwprune.nn import (
    AdamState,
    FixedPointFormat,
    Layer,
    Network,
    Regularizer,
    TrainConfig,
    adam_step,
    evaluate,
    fit,
    forward,
    group_regularization,
    im2col,
    jet_mlp,
    loss_and_grads,
    mlp,
    small_cnn,
)


def dense(name, w, b=None):
    w = np.asarray(w, dtype=float)
    return Layer("dense", name, w, np.zeros(w.shape[1]) if b is None else np.asarray(b, float))


# --- forward ---------------------------------------------------------------


def test_forward_1x1_dense():
    net = Network([dense("fc", [[2.0]], [0.0])], (1,))
    np.testing.assert_array_equal(forward(net, [[3.0]]), [[6.0]])


def test_relu_layer():
    net = Network([dense("fc", np.eye(3)), Layer("relu", "r")], (3,))
    np.testing.assert_array_equal(forward(net, [[-1.0, 0.0, 2.0]]), [[0.0, 0.0, 2.0]])


def test_jet_mlp_output_shape():
    net = jet_mlp(seed=3)
    out = forward(net, np.random.default_rng(0).standard_normal((8, 16)))
    assert out.shape == (8, 5)


def test_forward_deterministic():
    net = jet_mlp(seed=3)
    x = np.random.default_rng(0).standard_normal((8, 16))
    np.testing.assert_array_equal(forward(net, x), forward(net, x))


def test_forward_shape_mismatch():
    with pytest.raises(DimensionError):
        forward(jet_mlp(), np.zeros((2, 15)))


def test_incompatible_layers_rejected():
    with pytest.raises(DimensionError):
        Network([dense("a", np.zeros((4, 3))), dense("b", np.zeros((2, 2)))], (4,))


def test_unknown_layer_kind():
    with pytest.raises(UsageError):
        Layer("pool", "p")


# --- loss / gradients ------------------------------------------------------


def test_softmax_grad_symmetric_logits():
    # identity weights and zero input: logits [0, 0], so dL/dlogits = p - onehot
    net = Network([dense("fc", np.eye(2))], (2,))
    loss, grads = loss_and_grads(net, [[0.0, 0.0]], [0])
    assert loss == pytest.approx(np.log(2.0))
    # dL/db equals the logit gradient; dL/dW = x^T g vanishes
    np.testing.assert_allclose(grads[0][1], [-0.5, 0.5])
    np.testing.assert_array_equal(grads[0][0], np.zeros((2, 2)))


def test_zero_lambda_is_plain_cross_entropy():
    net = jet_mlp(seed=1)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((10, 16)), rng.integers(0, 5, 10)
    reg = Regularizer(lam=0.0, groups={0: [np.arange(16 * 64)]})
    plain, _ = loss_and_grads(net, x, y)
    with_reg, _ = loss_and_grads(net, x, y, reg)
    logits = forward(net, x)
    z = logits - logits.max(axis=1, keepdims=True)
    ce = np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(10), y])
    assert plain == with_reg
    assert plain == pytest.approx(ce, rel=1e-12)


def _param_list(net):
    out = []
    for idx, layer in net.trainable_layers():
        out.append((idx, "w", layer.weights))
        out.append((idx, "b", layer.bias))
    return out


def fd_relative_errors(net, x, y, reg=None, h=1e-3):
    """Central finite differences over every parameter; one error per tensor."""
    _, grads = loss_and_grads(net, x, y, reg)
    errors = []
    for idx, kind, p in _param_list(net):
        analytic = grads[idx][0 if kind == "w" else 1].ravel()
        numeric = np.zeros(p.size)
        flat = p.ravel()
        for k in range(p.size):
            orig = flat[k]
            flat[k] = orig + h
            up, _ = loss_and_grads(net, x, y, reg)
            flat[k] = orig - h
            down, _ = loss_and_grads(net, x, y, reg)
            flat[k] = orig
            numeric[k] = (up - down) / (2 * h)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        errors.append(np.linalg.norm(analytic - numeric) / denom)
    return errors


def test_gradcheck_4_3_2():
    net = mlp([4, 3, 2], seed=5)
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((6, 4)), rng.integers(0, 2, 6)
    assert max(fd_relative_errors(net, x, y)) <= 1e-4


def test_gradcheck_softmax_head():
    net = mlp([4, 3, 3], seed=6, softmax=True)
    rng = np.random.default_rng(6)
    x, y = rng.standard_normal((5, 4)), rng.integers(0, 3, 5)
    assert max(fd_relative_errors(net, x, y)) <= 1e-4


def test_gradcheck_conv():
    net = small_cnn((6, 6, 2), channels=(3,), hidden=(4,), n_classes=3, seed=2)
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((3, 6, 6, 2)), rng.integers(0, 3, 3)
    assert max(fd_relative_errors(net, x, y)) <= 1e-4


def test_gradcheck_with_group_regularization():
    net = mlp([4, 3, 2], seed=8)
    rng = np.random.default_rng(8)
    x, y = rng.standard_normal((6, 4)), rng.integers(0, 2, 6)
    reg = Regularizer(lam=0.05, groups={0: [np.arange(0, 6), np.arange(6, 12)], 2: [np.arange(6)]})
    assert max(fd_relative_errors(net, x, y, reg)) <= 1e-4


def test_bad_labels():
    with pytest.raises(UsageError):
        loss_and_grads(mlp([4, 2]), np.zeros((2, 4)), [0, 2])


def test_nonfinite_loss_names_layer():
    net = mlp([2, 2, 2])
    net.layers[0].weights[:] = np.inf
    with pytest.raises(NumericError) as exc:
        loss_and_grads(net, np.ones((1, 2)), [0])
    assert exc.value.layer == 0


# --- group regularization ----------------------------------------------------


def test_group_reg_345():
    term, grad = group_regularization([3.0, 4.0], [[0, 1]], 0.1)
    assert term == pytest.approx(0.5)
    np.testing.assert_allclose(grad, [0.06, 0.08])


def test_group_reg_zero_group():
    term, grad = group_regularization([0.0, 0.0], [[0, 1]], 0.1)
    assert term == 0.0
    np.testing.assert_array_equal(grad, [0.0, 0.0])


def test_group_reg_sum_of_norms():
    term, _ = group_regularization([1.0, 0.0, 0.0, 2.0], [[0, 1], [2, 3]], 1.0)
    assert term == pytest.approx(3.0)


@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=12),
    st.floats(0, 5),
    st.floats(0, 5),
)
def test_group_reg_monotone_in_lambda(w, lam1, lam2):
    lo, hi = sorted((lam1, lam2))
    groups = [list(range(0, len(w), 2)), list(range(1, len(w), 2))]
    groups = [g for g in groups if g]
    assert group_regularization(w, groups, lo)[0] <= group_regularization(w, groups, hi)[0]


# --- Adam --------------------------------------------------------------------


def test_adam_zero_grad_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    for _ in range(5):
        adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.t == 5


def _reference_adam_quadratic(steps, lr, b1=0.9, b2=0.999, eps=1e-7):
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
    return x


def test_adam_quadratic_matches_reference():
    params = {"x": np.array([1.0])}
    state = AdamState(lr=0.1)
    for _ in range(100):
        adam_step(params, {"x": 2 * params["x"]}, state)
    expected = _reference_adam_quadratic(100, 0.1)
    assert abs(params["x"][0]) < 0.1
    assert params["x"][0] == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_training_decreases_loss_on_separable_blobs():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.standard_normal((50, 2)) + 4, rng.standard_normal((50, 2)) - 4])
    y = np.repeat([0, 1], 50)
    net = mlp([2, 2], seed=0)
    start, _ = loss_and_grads(net, x, y)
    losses = []
    for step in range(10):
        fit(net, x, y, TrainConfig(epochs=1, batch_size=100, lr=0.05, lam=0.0, seed=step))
        losses.append(loss_and_grads(net, x, y)[0])
    assert all(b < a for a, b in zip([start] + losses, losses))


# --- masks --------------------------------------------------------------------


def test_masked_weights_stay_zero_through_training():
    data = synth_classify(1, 300)
    net = jet_mlp(seed=0)
    mask = np.random.default_rng(0).random(net.layers[0].weights.shape) > 0.5
    net.masks["fc1"] = mask
    reg = Regularizer(lam=1e-3, groups={0: [np.arange(16 * 64)]})
    fit(net, data.features, data.labels, TrainConfig(epochs=3, batch_size=32), reg)
    assert np.all(net.layers[0].weights[~mask] == 0.0)
    assert np.any(net.layers[0].weights[mask] != 0.0)


# --- conv as matrix product ---------------------------------------------------


def direct_conv(x, w, b):
    """Valid, stride-1 convolution written as explicit loops (independent oracle)."""
    n, h, wd, c = x.shape
    kh, kw, _, co = w.shape
    out = np.zeros((n, h - kh + 1, wd - kw + 1, co))
    for s in range(n):
        for i in range(h - kh + 1):
            for j in range(wd - kw + 1):
                for o in range(co):
                    acc = b[o]
                    for a in range(kh):
                        for d in range(kw):
                            for ch in range(c):
                                acc += x[s, i + a, j + d, ch] * w[a, d, ch, o]
                    out[s, i, j, o] = acc
    return out


@pytest.mark.parametrize("seed", range(3))
def test_conv_equals_direct_and_im2col(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((3, 3, 2, 4))
    b = rng.standard_normal(4)
    x = rng.standard_normal((2, 8, 8, 2))
    net = Network([Layer("conv2d", "c", w, b)], (8, 8, 2))
    got = forward(net, x)
    np.testing.assert_allclose(got, direct_conv(x, w, b), rtol=0, atol=1e-12)
    cols = im2col(x, 3, 3)
    np.testing.assert_allclose(cols @ w.reshape(18, 4) + b, got, rtol=0, atol=1e-12)


# --- evaluation / quantized evaluation ------------------------------------------


def test_constant_logits_is_chance():
    net = Network([Layer("dense", "fc", np.zeros((3, 5)), np.array([1.0, 0, 0, 0, 0]))], (3,))
    data = Dataset(np.zeros((10, 3)), np.repeat(np.arange(5), 2), 5)
    assert evaluate(net, data) == pytest.approx(0.2)


def test_lookup_net_memorizes():
    x = np.eye(4)
    net = Network([Layer("dense", "fc", np.eye(4) * 5, np.zeros(4))], (4,))
    assert evaluate(net, Dataset(x, np.arange(4), 4)) == 1.0


def test_evaluate_empty_dataset():
    with pytest.raises(UsageError):
        evaluate(jet_mlp(), Dataset(np.zeros((0, 16)), np.zeros(0, dtype=int), 5))


def test_quantized_accuracy_close_to_float(trained_jet, jet_task):
    _, val = jet_task
    fl = evaluate(trained_jet, val)
    q = evaluate(trained_jet, val, FixedPointFormat(18, 6))
    assert abs(fl - q) <= 0.02


def test_parameter_count_jet():
    assert jet_mlp().n_params() == 16 * 64 + 64 + 64 * 32 + 32 + 32 * 32 + 32 + 32 * 5 + 5 == 4389
