"""Engagement-attention ranker in the style of Deep Interest Network.

A small activation unit scores every past engagement against the candidate;
a masked softmax over the history turns the scores into weights, and the
weighted sum of engagement vectors (the interest vector) joins the candidate
features in a top perceptron.
"""
from __future__ import annotations

import numpy as np

from ..features import FeatureBatch
from ..nn import MLP, Concat, Dense, DimensionError, GradientTape, Layer, Node, Parameter, Squeeze, glorot_uniform
from .base import Model


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask``; rows with no entries give zeros."""
    logits = np.where(mask, logits, -np.inf)
    top = np.max(logits, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(logits - top), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    return np.divide(e, z, out=np.zeros_like(e), where=z > 0)


class AttentionPooling(Layer):
    """Inputs: events ``(N, T, d)``, query ``(N, d)``, mask ``(N, T)``; output ``(N, d)``.

    Activation unit: ``[e, q, e*q] -> hidden -> ReLU -> 1``.
    """

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.dim, self.hidden = dim, hidden
        self.w1 = Parameter(glorot_uniform(3 * dim, hidden, rng), "din.att.w1")
        self.b1 = Parameter(np.zeros(hidden), "din.att.b1")
        self.w2 = Parameter(glorot_uniform(hidden, 1, rng), "din.att.w2")
        self.b2 = Parameter(np.zeros(1), "din.att.b2")

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def logits(self, events, query):
        q = np.broadcast_to(query[:, None, :], events.shape)
        feats = np.concatenate([events, q, events * q], axis=-1)
        pre = feats @ self.w1.value + self.b1.value
        h = np.maximum(pre, 0.0)
        return (h @ self.w2.value)[..., 0] + self.b2.value[0], (feats, pre, h, q)

    def forward(self, events, query, mask):
        if events.shape[-1] != self.dim or query.shape[-1] != self.dim:
            raise DimensionError(f"attention expects dim {self.dim}, got {events.shape} and {query.shape}")
        mask = mask.astype(bool)
        logits, inner = self.logits(events, query)
        w = masked_softmax(logits, mask)
        interest = np.einsum("nt,ntd->nd", w, events)
        return interest, (events, mask, w, inner)

    def backward(self, cache, dy):
        events, mask, w, (feats, pre, h, q) = cache
        d = self.dim
        dw = np.einsum("nd,ntd->nt", dy, events)
        d_events = w[..., None] * dy[:, None, :]
        d_logits = w * (dw - np.sum(w * dw, axis=-1, keepdims=True))
        d_logits = np.where(mask, d_logits, 0.0)
        grads = {
            self.w2: (h.reshape(-1, self.hidden).T @ d_logits.reshape(-1, 1)),
            self.b2: np.array([d_logits.sum()]),
        }
        d_pre = (d_logits[..., None] * self.w2.value[:, 0]) * (pre > 0)
        grads[self.w1] = feats.reshape(-1, 3 * d).T @ d_pre.reshape(-1, self.hidden)
        grads[self.b1] = d_pre.reshape(-1, self.hidden).sum(axis=0)
        d_feats = d_pre @ self.w1.value.T
        de, dq, dprod = d_feats[..., :d], d_feats[..., d:2 * d], d_feats[..., 2 * d:]
        d_events = d_events + de + dprod * q
        d_query = np.sum(dq + dprod * events, axis=1)
        return (d_events, d_query, None), grads


FEATURE_SETS = {
    # history source, query sources, extra top-perceptron inputs
    "categorical": ("hist_cat", ("beta",), ("beta",)),
    "personalized": ("hist_item", ("beta", "gamma"), ("beta", "lambda", "tau", "gamma")),
}


class DeepInterestBandit(Model):
    kind = "din"

    def __init__(self, dims: dict[str, int], features: str = "categorical", att_hidden: int = 16,
                 hidden=(64, 32), seed: int = 0):
        super().__init__(dict(dims=dict(dims), features=features, att_hidden=att_hidden,
                              hidden=list(hidden), seed=seed))
        self.history, self.query_inputs, self.extra_inputs = FEATURE_SETS[features]
        rng = np.random.default_rng(seed)
        ev_dim = dims[self.history]
        self.query = Dense(sum(dims[k] for k in self.query_inputs), ev_dim, rng, bias=False, name="din.query")
        self.pool = AttentionPooling(ev_dim, att_hidden, rng)
        top_in = ev_dim + sum(dims[k] for k in self.extra_inputs)
        self.top = MLP([top_in, *hidden, 1], rng, name="din.top")
        self._concat_q = Concat()
        self._concat_top = Concat()
        self._squeeze = Squeeze()

    def parameters(self):
        return self.query.parameters() + self.pool.parameters() + self.top.parameters()

    def _history(self, batch: FeatureBatch):
        return batch.hist_item if self.history == "hist_item" else batch.hist_cat

    def _cat(self, tape, layer, names, batch):
        nodes = [tape.constant(batch.channel(k)) for k in names]
        return nodes[0] if len(nodes) == 1 else tape.apply(layer, *nodes)

    def forward(self, tape: GradientTape, batch: FeatureBatch) -> Node:
        q = tape.apply(self.query, self._cat(tape, self._concat_q, self.query_inputs, batch))
        events = tape.constant(self._history(batch))
        mask = Node(batch.hist_mask)
        interest = tape.apply(self.pool, events, q, mask)
        extras = [tape.constant(batch.channel(k)) for k in self.extra_inputs]
        x = tape.apply(self._concat_top, interest, *extras)
        return tape.apply(self._squeeze, self.top(tape, x))

    def attention_weights(self, batch: FeatureBatch) -> np.ndarray:
        tape = GradientTape(record=False)
        q = tape.apply(self.query, self._cat(tape, self._concat_q, self.query_inputs, batch)).value
        logits, _ = self.pool.logits(self._history(batch), q)
        return masked_softmax(logits, batch.hist_mask)
