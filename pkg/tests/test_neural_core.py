import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowopt.anomaly import detector
from flowopt.neural import core
from flowopt.neural.checkpoint import (CheckpointError, make_checkpoint, params_from_doc, read_checkpoint,
                                       write_json)
from flowopt.neural.core import AttentionParams, EmptySequence, LstmLayerParams, ShapeMismatch
from flowopt.neural.gradcheck import NonFiniteLoss, grad_check
from flowopt.neural.optim import AdamState, adam_step
from flowopt.scheduler.qnet import init_qnet, td_loss_and_grads


def rng(seed=0):
    return np.random.default_rng(seed)


# -- LSTM forward ---------------------------------------------------------------

def test_zero_weights_give_zero_hidden():
    stack = [LstmLayerParams.zeros(3, 4), LstmLayerParams.zeros(4, 2)]
    hs, finals, _ = core.lstm_forward(stack, rng().normal(size=(6, 3)))
    assert np.all(hs == 0.0)
    assert all(np.all(h == 0.0) and np.all(c == 0.0) for h, c in finals)


def test_hand_computed_three_steps():
    layer = LstmLayerParams.zeros(1, 1)
    layer.b[:3] = 50.0          # i, f, o saturate near 1
    layer.W[3, 0] = 1.0         # g = tanh(x)
    x = 0.5
    hs, finals, _ = core.lstm_forward([layer], np.full((3, 1), x))
    s = 1.0 / (1.0 + math.exp(-50.0))
    c, expected = 0.0, []
    for _ in range(3):
        c = s * c + s * math.tanh(x)
        expected.append(s * math.tanh(c))
    assert hs[:, 0] == pytest.approx(expected, abs=1e-15)
    assert finals[0][1][0] == pytest.approx(3 * math.tanh(x), rel=1e-12)


def test_empty_sequence_returns_initial_state():
    stack = [LstmLayerParams.init(2, 3, rng())]
    h0, c0 = np.full(3, 0.1), np.full(3, -0.2)
    hs, finals, _ = core.lstm_forward(stack, np.zeros((0, 2)), state=[(h0, c0)])
    assert hs.shape == (0, 3)
    np.testing.assert_array_equal(finals[0][0], h0)
    np.testing.assert_array_equal(finals[0][1], c0)


def test_shape_mismatch():
    stack = [LstmLayerParams.init(2, 3, rng()), LstmLayerParams.init(5, 3, rng())]
    with pytest.raises(ShapeMismatch):
        core.lstm_forward(stack, np.zeros((2, 2)))
    with pytest.raises(ShapeMismatch):
        core.lstm_forward(stack[:1], np.zeros(4))


def test_forget_bias_init():
    layer = LstmLayerParams.init(3, 4, rng())
    np.testing.assert_array_equal(layer.gate("f")[2], np.ones(4))
    assert np.abs(layer.W).max() <= 1 / math.sqrt(3)


def test_batched_matches_single():
    stack = [LstmLayerParams.init(3, 4, rng(1)), LstmLayerParams.init(4, 4, rng(2))]
    xs = rng(3).normal(size=(5, 2, 3))
    hs, _, _ = core.lstm_forward(stack, xs)
    for b in range(2):
        single, _, _ = core.lstm_forward(stack, xs[:, b])
        np.testing.assert_allclose(hs[:, b], single, rtol=0, atol=1e-15)


def test_forward_is_pure():
    stack = [LstmLayerParams.init(3, 4, rng(5))]
    xs = rng(6).normal(size=(4, 3))
    a, _, _ = core.lstm_forward(stack, xs)
    b, _, _ = core.lstm_forward(stack, xs)
    assert a.tobytes() == b.tobytes()


# -- LSTM backward ---------------------------------------------------------------

def _lstm_loss(xs, weights, n_layers):
    def f(params):
        stack = core.params_to_stack(params, n_layers)
        hs, _, cache = core.lstm_forward(stack, xs)
        loss = float(np.sum(weights * hs))
        grads, _ = core.lstm_backward(stack, cache, weights)
        return loss, {f"lstm{k}.{n}": g[n] for k, g in enumerate(grads) for n in ("W", "U", "b")}
    return f


def test_lstm_gradcheck_tiny():
    stack = [LstmLayerParams.init(3, 4, rng(7))]
    xs = rng(8).normal(size=(3, 3))
    weights = rng(9).normal(size=(3, 4))
    assert grad_check(_lstm_loss(xs, weights, 1), core.stack_to_params(stack)) < 1e-4


def test_lstm_gradcheck_two_layers_and_final_state():
    stack = [LstmLayerParams.init(2, 3, rng(10)), LstmLayerParams.init(3, 3, rng(11))]
    xs = rng(12).normal(size=(4, 2))
    wc = rng(13).normal(size=3)

    def f(params):
        st_ = core.params_to_stack(params, 2)
        hs, finals, cache = core.lstm_forward(st_, xs)
        loss = float(np.sum(hs ** 2) + wc @ finals[0][1])
        grads, _ = core.lstm_backward(st_, cache, 2 * hs, dfinal=[(np.zeros(3), wc), None])
        return loss, {f"lstm{k}.{n}": g[n] for k, g in enumerate(grads) for n in ("W", "U", "b")}
    assert grad_check(f, core.stack_to_params(stack)) < 1e-4


def test_lstm_input_gradient():
    stack = [LstmLayerParams.init(3, 2, rng(14))]
    weights = rng(15).normal(size=(3, 2))

    def f(params):
        hs, _, cache = core.lstm_forward(stack, params["x"])
        _, dx = core.lstm_backward(stack, cache, weights)
        return float(np.sum(weights * hs)), {"x": dx}
    assert grad_check(f, {"x": rng(16).normal(size=(3, 3))}) < 1e-4


def test_zero_upstream_and_linearity():
    stack = [LstmLayerParams.init(3, 4, rng(17))]
    xs = rng(18).normal(size=(5, 3))
    _, _, cache = core.lstm_forward(stack, xs)
    zero, _ = core.lstm_backward(stack, cache, np.zeros((5, 4)))
    assert all(np.all(g == 0.0) for g in zero[0].values())
    d = rng(19).normal(size=(5, 4))
    one, _ = core.lstm_backward(stack, cache, d)
    two, _ = core.lstm_backward(stack, cache, 2 * d)
    for name in ("W", "U", "b"):
        np.testing.assert_allclose(two[0][name], 2 * one[0][name], rtol=1e-13)


# -- attention ---------------------------------------------------------------------

def test_identical_states_uniform_weights():
    att = AttentionParams.init(3, 5, rng(20))
    h = np.array([0.3, -1.0, 2.0])
    ctx, w = core.attention_pool(att, np.tile(h, (4, 1)))
    np.testing.assert_allclose(w, 0.25)
    np.testing.assert_allclose(ctx, h)


def test_single_step_and_equal_scores():
    att = AttentionParams.init(2, 3, rng(21))
    ctx, w = core.attention_pool(att, [[1.0, 2.0]])
    assert w.tolist() == [1.0] and ctx.tolist() == [1.0, 2.0]
    # h and -h have opposite tanh features; v = 0 makes every score equal
    att0 = AttentionParams(att.W, np.zeros(3))
    _, w = core.attention_pool(att0, [[1.0, 2.0], [-1.0, -2.0]])
    assert w.tolist() == [0.5, 0.5]


def test_empty_attention():
    with pytest.raises(EmptySequence):
        core.attention_pool(AttentionParams.init(2, 2, rng()), np.zeros((0, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-5, 5)))
def test_attention_weights_sum_to_one(hs):
    _, w = core.attention_pool(AttentionParams.init(3, 4, rng(22)), hs)
    assert abs(w.sum() - 1.0) < 1e-9 and np.all(w > 0)


def test_causal_attention_first_step_is_itself_and_gradcheck():
    att = AttentionParams.init(3, 4, rng(23))
    hs = rng(24).normal(size=(4, 2, 3))
    ctx, _ = core.causal_attention_forward(att, hs)
    np.testing.assert_allclose(ctx[0], hs[0])
    weights = rng(25).normal(size=ctx.shape)

    def f(params):
        a = AttentionParams(params["W"], params["v"])
        c, cache = core.causal_attention_forward(a, params["hs"])
        g, dhs = core.causal_attention_backward(a, cache, weights)
        return float(np.sum(weights * c)), {"W": g["W"], "v": g["v"], "hs": dhs}
    assert grad_check(f, {"W": att.W, "v": att.v, "hs": hs}) < 1e-6


# -- softmax, cross-entropy, dense ---------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-700, 700)))
def test_softmax_properties(z):
    p = core.softmax(z)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(p >= 0) and np.all(np.isfinite(p))


def test_softmax_strictly_positive_on_moderate_logits():
    p = core.softmax(rng(26).normal(scale=10, size=(20, 7)))
    assert np.all(p > 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-1e3, 1e3)))
def test_gate_ranges(x):
    s = core.sigmoid(x)
    assert np.all((s >= 0) & (s <= 1))
    small = x[np.abs(x) < 30]
    assert np.all((core.sigmoid(small) > 0) & (core.sigmoid(small) < 1))
    assert np.all(np.abs(np.tanh(small[np.abs(small) < 15])) < 1)


def test_linear_loss_gradcheck_exact():
    x = rng(27).normal(size=5)
    err = grad_check(lambda p: (float(p["w"] @ x), {"w": x.copy()}), {"w": rng(28).normal(size=5)})
    assert err < 1e-9


def test_softmax_cross_entropy_gradcheck():
    targets = np.array([0, 3, 2, 1])
    err = grad_check(lambda p: core.softmax_cross_entropy(p["z"], targets)[:1] +
                     ({"z": core.softmax_cross_entropy(p["z"], targets)[1]},),
                     {"z": rng(29).normal(size=(4, 5))})
    assert err < 1e-6


def test_weighted_cross_entropy_ignores_zero_weight_rows():
    z = rng(30).normal(size=(3, 4))
    loss, grad = core.softmax_cross_entropy(z, np.array([1, 2, 3]), np.array([1.0, 0.0, 1.0]))
    ref, _ = core.softmax_cross_entropy(z[[0, 2]], np.array([1, 3]))
    assert loss == pytest.approx(ref)
    assert np.all(grad[1] == 0)


def test_mlp_gradcheck():
    params = core.mlp_init([4, 5, 3], rng(31), "m.")
    x = rng(32).normal(size=(6, 4))
    w = rng(33).normal(size=(6, 3))

    def f(p):
        out, acts = core.mlp_forward(p, x, 2, "m.")
        g, _ = core.mlp_backward(p, acts, w, 2, "m.")
        return float(np.sum(w * out)), g
    assert grad_check(f, params) < 1e-4


def test_full_detector_stack_gradcheck():
    # unit-scale weights so the attention block carries real signal; at fresh-init
    # scale its weight gradients sit near 1e-8, below central-difference resolution
    enc = detector.TraceEncoding.build([["a", "b", "c", "d"]])
    assert enc.size == 6
    inputs, targets, mask = detector.pad_batch([enc.encode(["a", "b", "c", "d"])])
    assert inputs.shape == (5, 1)
    r = rng(0)
    shapes = detector.init_params(enc, detector.DetectorConfig(hidden=4, layers=2, attention=4))
    params = {k: r.normal(size=v.shape) for k, v in shapes.items()}
    err = grad_check(lambda p: detector.loss_and_grads(p, inputs, targets, mask, enc.input_size), params)
    assert err < 1e-4


def test_qnet_gradcheck():
    params = init_qnet(7, (6, 5), 4, rng(35))
    s = rng(36).normal(size=(8, 7))
    a = rng(37).integers(0, 4, size=8)
    y = rng(38).normal(size=8)
    assert grad_check(lambda p: td_loss_and_grads(p, s, a, y), params) < 1e-4


def test_nonfinite_loss_raises():
    with pytest.raises(NonFiniteLoss):
        grad_check(lambda p: (float("nan"), {"w": np.zeros(1)}), {"w": np.zeros(1)})


# -- Adam -------------------------------------------------------------------------------

def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    out, state = adam_step(p, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(out["w"], p["w"])
    assert state.t == 1


def test_adam_first_step_is_signed_lr():
    g = np.array([3.0, -0.02, 1e-3])
    out, _ = adam_step({"w": np.zeros(3)}, {"w": g}, AdamState(lr=0.01))
    np.testing.assert_allclose(out["w"], -0.01 * np.sign(g), rtol=1e-4)


def test_adam_matches_scalar_recurrence_and_converges_to_lr():
    lr, g = 0.001, 0.7
    state = AdamState(lr=lr)
    p = {"w": np.zeros(1)}
    m = v = 0.0
    w = 0.0
    for t in range(1, 301):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        step = lr * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        w -= step
        prev = p["w"][0]
        p, state = adam_step(p, {"w": np.array([g])}, state)
        assert p["w"][0] == pytest.approx(w, rel=1e-12)
    assert prev - p["w"][0] == pytest.approx(lr, rel=1e-6)


def test_adam_shape_checks():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, AdamState())


# -- checkpoints ---------------------------------------------------------------------------

def test_checkpoint_bit_identical(tmp_path):
    params = {"a": rng(39).normal(size=(3, 4)), "b": np.array([1 / 3, math.pi, 1e-300])}
    path = tmp_path / "ck.json"
    write_json(make_checkpoint("demo", {"x": 1}, params), path)
    back = params_from_doc(read_checkpoint(path, "demo")["params"])
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_checkpoint_errors(tmp_path):
    doc = make_checkpoint("demo", {}, {"a": np.zeros(2)})
    with pytest.raises(CheckpointError):
        read_checkpoint(doc, "other")
    with pytest.raises(CheckpointError):
        read_checkpoint(dict(doc, format_version=99), "demo")
    bad = json.loads(json.dumps(doc))
    bad["params"]["a"]["shape"] = [3]
    with pytest.raises(CheckpointError):
        params_from_doc(bad["params"])
