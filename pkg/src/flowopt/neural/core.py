"""Dense layers, stacked LSTM with BPTT, additive attention and softmax heads.

Everything is float64 numpy. Sequences are time-major: ``(T, B, features)``.
Parameters travel as plain ``dict[str, ndarray]`` so optimizers, gradient
checks and checkpoints can treat every model the same way.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


class EmptySequence(ValueError):
    pass


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# --- LSTM -------------------------------------------------------------------

GATES = ("i", "f", "o", "g")


@dataclass
class LstmLayerParams:
    """One LSTM layer; gate blocks are stacked in the order i, f, o, g."""

    W: np.ndarray  # (4H, I)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str):
        """(W_gate, U_gate, b_gate) views for one gate."""
        k = GATES.index(name)
        h = self.hidden_size
        sl = slice(k * h, (k + 1) * h)
        return self.W[sl], self.U[sl], self.b[sl]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng, forget_bias: float = 1.0):
        W = uniform_init(rng, (4 * hidden_size, input_size), input_size)
        U = uniform_init(rng, (4 * hidden_size, hidden_size), hidden_size)
        b = np.zeros(4 * hidden_size)
        b[hidden_size:2 * hidden_size] = forget_bias
        return cls(W, U, b)

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int):
        return cls(np.zeros((4 * hidden_size, input_size)), np.zeros((4 * hidden_size, hidden_size)),
                   np.zeros(4 * hidden_size))


def _as_batch(xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        return xs[:, None, :], True
    if xs.ndim == 3:
        return xs, False
    raise ShapeMismatch(f"expected (T, I) or (T, B, I) input, got shape {xs.shape}")


def check_stack(stack, input_size):
    expect = input_size
    for k, layer in enumerate(stack):
        if layer.input_size != expect:
            raise ShapeMismatch(f"layer {k} expects input {layer.input_size}, got {expect}")
        if layer.U.shape != (4 * layer.hidden_size, layer.hidden_size) or layer.b.shape != (4 * layer.hidden_size,):
            raise ShapeMismatch(f"layer {k} has inconsistent parameter shapes")
        expect = layer.hidden_size


def lstm_forward(stack, xs, state=None):
    """Run a layer stack over a sequence from zero (or given) initial state.

    Returns ``(hs, finals, cache)``: ``hs`` holds the top layer's hidden
    output per step, ``finals`` is a list of (h, c) per layer.
    """
    xs, single = _as_batch(xs)
    T, B, I = xs.shape
    check_stack(stack, I)
    finals, caches = [], []
    inp = xs
    for k, layer in enumerate(stack):
        H = layer.hidden_size
        if state is not None:
            h, c = (np.array(a, dtype=np.float64).reshape(B, H) for a in state[k])
        else:
            h, c = np.zeros((B, H)), np.zeros((B, H))
        h0, c0 = h, c
        outs = np.zeros((T, B, H))
        steps = []
        for t in range(T):
            a = inp[t] @ layer.W.T + h @ layer.U.T + layer.b
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H:2 * H])
            o = sigmoid(a[:, 2 * H:3 * H])
            g = np.tanh(a[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            steps.append((i, f, o, g, c, h, tc))
            h, c = h_new, c_new
            outs[t] = h
        finals.append((h, c))
        caches.append({"x": inp, "steps": steps, "h0": h0, "c0": c0})
        inp = outs
    cache = {"layers": caches, "single": single}
    hs = inp[:, 0, :] if single else inp
    if single:
        finals = [(h[0], c[0]) for h, c in finals]
    return hs, finals, cache


def lstm_backward(stack, cache, dhs, dfinal=None):
    """Backpropagation through time.

    ``dhs`` is the loss gradient w.r.t. the top hidden outputs (same shape as
    the forward ``hs``); ``dfinal`` optionally adds gradients w.r.t. the final
    (h, c) of each layer. Returns (per-layer grads dicts, input gradient).
    """
    single = cache["single"]
    dhs = np.asarray(dhs, dtype=np.float64)
    if single:
        dhs = dhs[:, None, :]
    grads = [None] * len(stack)
    d_out = dhs
    for k in reversed(range(len(stack))):
        layer, lc = stack[k], cache["layers"][k]
        H = layer.hidden_size
        x = lc["x"]
        T, B, _ = x.shape
        if d_out.shape != (T, B, H):
            raise ShapeMismatch(f"upstream gradient shape {d_out.shape} != {(T, B, H)}")
        dW = np.zeros_like(layer.W)
        dU = np.zeros_like(layer.U)
        db = np.zeros_like(layer.b)
        dx = np.zeros_like(x)
        dh_next, dc_next = np.zeros((B, H)), np.zeros((B, H))
        if dfinal is not None and dfinal[k] is not None:
            dh_f, dc_f = dfinal[k]
            dh_next = dh_next + np.reshape(dh_f, (B, H))
            dc_next = dc_next + np.reshape(dc_f, (B, H))
        da = np.empty((B, 4 * H))
        for t in reversed(range(T)):
            i, f, o, g, c_prev, h_prev, tc = lc["steps"][t]
            dh = d_out[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da[:, :H] = dc * g * i * (1.0 - i)
            da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            da[:, 3 * H:] = dc * i * (1.0 - g * g)
            dW += da.T @ x[t]
            dU += da.T @ h_prev
            db += da.sum(axis=0)
            dx[t] = da @ layer.W
            dh_next = da @ layer.U
            dc_next = dc * f
        grads[k] = {"W": dW, "U": dU, "b": db}
        d_out = dx
    dx = d_out[:, 0, :] if single else d_out
    return grads, dx


# --- additive attention -------------------------------------------------------

@dataclass
class AttentionParams:
    W: np.ndarray  # (A, H)
    v: np.ndarray  # (A,)

    @classmethod
    def init(cls, hidden_size: int, attn_size: int, rng):
        return cls(uniform_init(rng, (attn_size, hidden_size), hidden_size),
                   uniform_init(rng, (attn_size,), attn_size))


def attention_pool(att: AttentionParams, hs):
    """Pool a list of hidden states into one context vector.

    score_t = v . tanh(W h_t); weights = softmax(scores).
    """
    hs = np.asarray(hs, dtype=np.float64)
    if hs.ndim != 2 or hs.shape[0] == 0:
        raise EmptySequence("attention needs at least one hidden state")
    scores = np.tanh(hs @ att.W.T) @ att.v
    w = softmax(scores)
    return w @ hs, w


def causal_attention_forward(att: AttentionParams, hs):
    """For every step t, attend over steps 0..t. hs: (T, B, H)."""
    T = hs.shape[0]
    u = np.tanh(hs @ att.W.T)                      # (T, B, A)
    s = u @ att.v                                  # (T, B)
    scores = np.broadcast_to(s.T[:, None, :], (hs.shape[1], T, T)).copy()  # [b, t, j]
    future = np.triu(np.ones((T, T), dtype=bool), k=1)
    scores[:, future] = -np.inf
    alpha = softmax(scores, axis=-1)               # (B, T, T)
    ctx = np.einsum("btj,jbh->tbh", alpha, hs)
    return ctx, {"hs": hs, "u": u, "alpha": alpha}


def causal_attention_backward(att: AttentionParams, cache, dctx):
    hs, u, alpha = cache["hs"], cache["u"], cache["alpha"]
    dhs = np.einsum("btj,tbh->jbh", alpha, dctx)
    dalpha = np.einsum("tbh,jbh->btj", dctx, hs)
    dscores = alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))
    ds = dscores.sum(axis=1).T                     # (T, B): each s_j feeds every t >= j
    dv = np.einsum("tba,tb->a", u, ds)
    dpre = (ds[:, :, None] * att.v) * (1.0 - u * u)
    dW = np.einsum("tba,tbh->ah", dpre, hs)
    dhs += dpre @ att.W
    return {"W": dW, "v": dv}, dhs


# --- dense layers and MLP -------------------------------------------------------

def dense_forward(W, b, x):
    return x @ W.T + b


def mlp_init(sizes, rng, prefix=""):
    params = {}
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}W{k}"] = uniform_init(rng, (n_out, n_in), n_in)
        params[f"{prefix}b{k}"] = np.zeros(n_out)
    return params


def mlp_forward(params, x, n_layers, prefix=""):
    """tanh hidden layers, linear output."""
    acts = [x]
    h = x
    for k in range(n_layers):
        z = h @ params[f"{prefix}W{k}"].T + params[f"{prefix}b{k}"]
        h = np.tanh(z) if k < n_layers - 1 else z
        acts.append(h)
    return h, acts


def mlp_backward(params, acts, dout, n_layers, prefix=""):
    grads = {}
    d = dout
    for k in reversed(range(n_layers)):
        if k < n_layers - 1:
            d = d * (1.0 - acts[k + 1] ** 2)
        grads[f"{prefix}W{k}"] = d.T @ acts[k]
        grads[f"{prefix}b{k}"] = d.sum(axis=0)
        d = d @ params[f"{prefix}W{k}"]
    return grads, d


def softmax_cross_entropy(logits, targets, weights=None):
    """Mean (weighted) cross-entropy over rows and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if weights is None:
        weights = np.ones(n)
    total = weights.sum()
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -np.sum(weights * logp[rows, targets]) / total
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    grad *= (weights / total)[:, None]
    return loss, grad


# --- flat parameter dicts for stacks -----------------------------------------------

def stack_to_params(stack, prefix="lstm"):
    out = {}
    for k, layer in enumerate(stack):
        out[f"{prefix}{k}.W"] = layer.W
        out[f"{prefix}{k}.U"] = layer.U
        out[f"{prefix}{k}.b"] = layer.b
    return out


def params_to_stack(params, n_layers, prefix="lstm"):
    return [LstmLayerParams(params[f"{prefix}{k}.W"], params[f"{prefix}{k}.U"], params[f"{prefix}{k}.b"])
            for k in range(n_layers)]
