"""Next-activity LSTM detector: training, scoring, calibration, evaluation.

The network reads one-hot activity symbols, runs a stacked LSTM, pools the
prefix with causal additive attention and predicts the next symbol from
[h_t, context_t] through a softmax head. A trace's anomaly score is its mean
negative log-likelihood per transition (BOS -> a1 -> ... -> an -> EOS).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..neural import core
from ..neural.checkpoint import make_checkpoint, params_from_doc, read_checkpoint, write_json
from ..neural.optim import AdamState, adam_step

BOS, EOS = "<bos>", "<eos>"


class EmptyTraining(ValueError):
    pass


class EmptyTrace(ValueError):
    pass


class EmptyValidation(ValueError):
    pass


@dataclass(frozen=True)
class TraceEncoding:
    """Activity vocabulary plus BOS/EOS. Unknown activities map to ``unk``,
    an input-only index one past the vocabulary."""

    activities: tuple

    @property
    def size(self) -> int:
        return len(self.activities) + 2

    @property
    def bos(self) -> int:
        return len(self.activities)

    @property
    def eos(self) -> int:
        return len(self.activities) + 1

    @property
    def unk(self) -> int:
        return self.size

    @property
    def input_size(self) -> int:
        return self.size + 1

    @classmethod
    def build(cls, traces) -> "TraceEncoding":
        return cls(tuple(sorted({a for t in traces for a in t})))

    def encode(self, trace) -> list[int]:
        index = {a: i for i, a in enumerate(self.activities)}
        return [self.bos] + [index.get(a, self.unk) for a in trace] + [self.eos]

    def symbol(self, idx: int) -> str:
        if idx < len(self.activities):
            return self.activities[idx]
        return {self.bos: BOS, self.eos: EOS}.get(idx, "<unk>")


@dataclass
class DetectorConfig:
    hidden: int = 32
    layers: int = 2
    attention: int = 16
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.001
    seed: int = 0


def init_params(enc: TraceEncoding, cfg: DetectorConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    n_in = enc.input_size
    for k in range(cfg.layers):
        layer = core.LstmLayerParams.init(n_in, cfg.hidden, rng)
        params[f"lstm{k}.W"], params[f"lstm{k}.U"], params[f"lstm{k}.b"] = layer.W, layer.U, layer.b
        n_in = cfg.hidden
    att = core.AttentionParams.init(cfg.hidden, cfg.attention, rng)
    params["att.W"], params["att.v"] = att.W, att.v
    V = enc.size
    params["out.Wh"] = core.uniform_init(rng, (V, cfg.hidden), 2 * cfg.hidden)
    params["out.Wc"] = core.uniform_init(rng, (V, cfg.hidden), 2 * cfg.hidden)
    params["out.b"] = np.zeros(V)
    return params


def _n_layers(params) -> int:
    return sum(1 for k in params if k.endswith(".U"))


def forward(params, inputs, input_size):
    """inputs: (T, B) symbol indices -> logits (T, B, V) and cache."""
    T, B = inputs.shape
    X = np.zeros((T, B, input_size))
    X[np.arange(T)[:, None], np.arange(B)[None, :], inputs] = 1.0
    stack = core.params_to_stack(params, _n_layers(params))
    hs, _, lcache = core.lstm_forward(stack, X)
    att = core.AttentionParams(params["att.W"], params["att.v"])
    ctx, acache = core.causal_attention_forward(att, hs)
    logits = hs @ params["out.Wh"].T + ctx @ params["out.Wc"].T + params["out.b"]
    return logits, (stack, lcache, att, acache, hs, ctx)


def loss_and_grads(params, inputs, targets, mask, input_size):
    """Mean cross-entropy over unmasked transitions, and its gradients."""
    logits, (stack, lcache, att, acache, hs, ctx) = forward(params, inputs, input_size)
    T, B, V = logits.shape
    loss, dlogits = core.softmax_cross_entropy(logits.reshape(T * B, V), targets.reshape(-1),
                                               mask.reshape(-1).astype(np.float64))
    dlogits = dlogits.reshape(T, B, V)
    grads = {
        "out.Wh": np.einsum("tbv,tbh->vh", dlogits, hs),
        "out.Wc": np.einsum("tbv,tbh->vh", dlogits, ctx),
        "out.b": dlogits.sum(axis=(0, 1)),
    }
    dhs = dlogits @ params["out.Wh"]
    dctx = dlogits @ params["out.Wc"]
    agrads, dhs_att = core.causal_attention_backward(att, acache, dctx)
    grads["att.W"], grads["att.v"] = agrads["W"], agrads["v"]
    lgrads, _ = core.lstm_backward(stack, lcache, dhs + dhs_att)
    for k, g in enumerate(lgrads):
        for name in ("W", "U", "b"):
            grads[f"lstm{k}.{name}"] = g[name]
    return loss, grads


def pad_batch(seqs):
    """Encoded symbol sequences -> (inputs, targets, mask), time-major."""
    T = max(len(s) for s in seqs) - 1
    B = len(seqs)
    inputs = np.zeros((T, B), dtype=np.int64)
    targets = np.zeros((T, B), dtype=np.int64)
    mask = np.zeros((T, B), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s) - 1
        inputs[:n, b] = s[:-1]
        targets[:n, b] = s[1:]
        mask[:n, b] = True
    return inputs, targets, mask


@dataclass
class DetectionResult:
    case_id: object
    score: float
    flagged: bool


@dataclass
class DetectorModel:
    encoding: TraceEncoding
    params: dict
    config: DetectorConfig
    threshold: float = math.inf
    history: list = field(default_factory=list)

    def transition_logprobs(self, trace) -> np.ndarray:
        seq = self.encoding.encode(trace)
        inputs, targets, _ = pad_batch([seq])
        logits, _ = forward(self.params, inputs, self.encoding.input_size)
        logp = core.log_softmax(logits[:, 0, :])
        out = np.empty(len(seq) - 1)
        for t, tgt in enumerate(targets[:, 0]):
            if tgt == self.encoding.unk:
                # unseen symbol: half the mass of the least likely known one
                out[t] = np.min(logp[t]) - math.log(2.0)
            else:
                out[t] = logp[t, tgt]
        return out

    def next_distribution(self, prefix) -> dict:
        """P(next symbol | prefix) as a symbol -> probability map."""
        seq = self.encoding.encode(prefix)[:-1]
        logits, _ = forward(self.params, np.array(seq)[:, None], self.encoding.input_size)
        p = core.softmax(logits[-1, 0])
        return {self.encoding.symbol(i): float(p[i]) for i in range(self.encoding.size)}

    def save(self, path=None) -> dict:
        arch = {"hidden": self.config.hidden, "layers": self.config.layers,
                "attention": self.config.attention}
        doc = make_checkpoint("detector", arch, self.params,
                              vocabulary=list(self.encoding.activities),
                              threshold=self.threshold if math.isfinite(self.threshold) else None,
                              config=vars(self.config), history=self.history)
        if path is not None:
            write_json(doc, path)
        return doc

    @classmethod
    def load(cls, source) -> "DetectorModel":
        doc = read_checkpoint(source, "detector")
        threshold = doc.get("threshold")
        return cls(TraceEncoding(tuple(doc["vocabulary"])), params_from_doc(doc["params"]),
                   DetectorConfig(**doc["config"]),
                   math.inf if threshold is None else float(threshold), list(doc.get("history", [])))


def train_detector(traces: Sequence[Sequence[str]], config: Optional[DetectorConfig] = None) -> DetectorModel:
    """Fit the next-activity model on normal traces (activity sequences)."""
    cfg = config or DetectorConfig()
    traces = [list(t) for t in traces]
    if not traces:
        raise EmptyTraining("no training traces")
    enc = TraceEncoding.build(traces)
    params = init_params(enc, cfg)
    seqs = [enc.encode(t) for t in traces]
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState(lr=cfg.lr)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(seqs))
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [seqs[i] for i in order[lo:lo + cfg.batch_size]]
            inputs, targets, mask = pad_batch(batch)
            loss, grads = loss_and_grads(params, inputs, targets, mask, enc.input_size)
            params, state = adam_step(params, grads, state)
            n = int(mask.sum())
            total += loss * n
            count += n
        history.append(total / count)
    return DetectorModel(enc, params, cfg, history=history)


def mean_cross_entropy(model: DetectorModel, traces) -> float:
    seqs = [model.encoding.encode(t) for t in traces]
    inputs, targets, mask = pad_batch(seqs)
    loss, _ = loss_and_grads(model.params, inputs, targets, mask, model.encoding.input_size)
    return float(loss)


def score_trace(model: DetectorModel, trace, case_id=None) -> DetectionResult:
    if trace is None:
        raise EmptyTrace("no trace")
    lp = model.transition_logprobs(list(trace))
    score = float(-lp.mean())
    return DetectionResult(case_id, score, score > model.threshold)


def score_traces(model: DetectorModel, traces) -> np.ndarray:
    # one trace per forward pass keeps every score bit-identical to score_trace
    return np.array([score_trace(model, t).score for t in traces], dtype=np.float64)


def calibrate_threshold(model: DetectorModel, traces, target_fpr: float = 0.005) -> float:
    """Nearest-rank (1 - target_fpr) quantile of validation scores; also stored on the model."""
    traces = list(traces)
    if not traces:
        raise EmptyValidation("no validation traces")
    if not 0 < target_fpr <= 1:
        raise ValueError("target_fpr must be in (0, 1]")
    if len(traces) < math.ceil(1.0 / target_fpr):
        warnings.warn(f"{len(traces)} validation traces is fewer than 1/target_fpr", stacklevel=2)
    scores = np.sort(score_traces(model, traces))
    rank = max(1, math.ceil((1.0 - target_fpr) * len(scores) - 1e-9))
    model.threshold = float(scores[rank - 1])
    return model.threshold


def roc_auc(scores, labels) -> Optional[float]:
    """Rank-statistic AUC (ties count one half); None when a class is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_detector(model: DetectorModel, traces, labels) -> dict:
    """labels: True = anomalous. Accuracy/FPR/TPR at the model threshold."""
    scores = score_traces(model, traces)
    labels = np.asarray(labels, dtype=bool)
    flagged = scores > model.threshold
    neg, pos = ~labels, labels
    return {
        "n": int(len(labels)),
        "accuracy": float(np.mean(flagged == labels)) if len(labels) else None,
        "fpr": float(flagged[neg].mean()) if neg.any() else None,
        "tpr": float(flagged[pos].mean()) if pos.any() else None,
        "auc": roc_auc(scores, labels),
        "threshold": model.threshold,
    }
