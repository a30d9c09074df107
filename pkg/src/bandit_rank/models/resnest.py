"""Split-attention ranker over a channel feature map.

The image-domain block is adapted to 1-D maps of shape ``(L, C)``: the
grouped convolution becomes a per-position dense map over channels (a 1x1
convolution), applied ``radix`` times in parallel. The splits are summed,
pooled over length, passed through a bottleneck and turned into a
``radix``-way softmax per output channel; the block returns the
attention-weighted sum of splits plus a residual.
"""
from __future__ import annotations

import numpy as np

from ..features import ChannelProjection, FeatureBatch
from ..nn import MLP, DimensionError, GlobalAvgPool, GradientTape, Layer, Node, Parameter, Squeeze, glorot_uniform
from .base import Model

CHANNEL_SETS = {
    "categorical": ("beta",),
    "personalized": ("beta", "lambda", "tau", "gamma"),
}


def _group_mask(n_rows: int, n_cols: int, groups: int) -> np.ndarray:
    rg = np.arange(n_rows) // (n_rows // groups)
    cg = np.arange(n_cols) // (n_cols // groups)
    return (rg[:, None] == cg[None, :]).astype(np.float64)


class SplitAttention(Layer):
    """One split-attention block on ``(N, L, C_in)`` maps -> ``(N, L, C_out)``.

    With ``C_in != C_out`` the residual goes through a biasless channel map.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, radix: int = 2,
                 cardinality: int = 1, bottleneck: int = 8, name: str = "splat"):
        if radix < 1 or cardinality < 1:
            raise ValueError("radix and cardinality must be >= 1")
        if c_in % cardinality or c_out % cardinality:
            raise DimensionError(f"cardinality {cardinality} must divide channels {c_in} and {c_out}")
        self.c_in, self.c_out, self.radix, self.cardinality = c_in, c_out, radix, cardinality
        self.bottleneck = bottleneck
        k, r, h = cardinality, radix, bottleneck
        # split i, channel c lives at column i * c_out + c
        self.mask_w = np.tile(_group_mask(c_in, c_out, k), (1, r))
        self.mask_v1 = _group_mask(c_out, k * h, k)
        self.mask_v2 = np.tile(_group_mask(k * h, c_out, k), (1, r))
        self.w = Parameter(glorot_uniform(c_in, c_out, rng, shape=(c_in, r * c_out)) * self.mask_w, f"{name}.w")
        self.b = Parameter(np.zeros(r * c_out), f"{name}.b")
        self.v1 = Parameter(glorot_uniform(c_out, k * h, rng) * self.mask_v1, f"{name}.v1")
        self.c1 = Parameter(np.zeros(k * h), f"{name}.c1")
        self.v2 = Parameter(glorot_uniform(k * h, r * c_out, rng) * self.mask_v2, f"{name}.v2")
        self.c2 = Parameter(np.zeros(r * c_out), f"{name}.c2")
        self.shortcut = (Parameter(glorot_uniform(c_in, c_out, rng), f"{name}.shortcut")
                         if c_in != c_out else None)

    def parameters(self):
        ps = [self.w, self.b, self.v1, self.c1, self.v2, self.c2]
        return ps + ([self.shortcut] if self.shortcut is not None else [])

    def _attention(self, s):
        n = s.shape[0]
        pre = s @ (self.v1.value * self.mask_v1) + self.c1.value
        h = np.maximum(pre, 0.0)
        logits = (h @ (self.v2.value * self.mask_v2) + self.c2.value).reshape(n, self.radix, self.c_out)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True), pre, h

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.c_in:
            raise DimensionError(f"split attention expects (N, L, {self.c_in}), got {x.shape}")
        c = self.c_out
        z = x @ (self.w.value * self.mask_w) + self.b.value
        u = np.maximum(z, 0.0)
        splits = [u[..., i * c:(i + 1) * c] for i in range(self.radix)]
        s = sum(splits).mean(axis=1)
        a, pre, h = self._attention(s)
        out = x.copy() if self.shortcut is None else x @ self.shortcut.value
        for i, ui in enumerate(splits):
            out += a[:, None, i, :] * ui
        return out, (x, z, u, s, pre, h, a)

    def attention_weights(self, x) -> np.ndarray:
        """``(N, radix, C_out)`` weights; sums to one over the radix axis."""
        return self.forward(x)[1][-1]

    def backward(self, cache, dy):
        x, z, u, s, pre, h, a = cache
        n, length, _ = x.shape
        r, c = self.radix, self.c_out
        grads = {}
        if self.shortcut is None:
            dx = dy.copy()
        else:
            grads[self.shortcut] = x.reshape(-1, self.c_in).T @ dy.reshape(-1, c)
            dx = dy @ self.shortcut.value.T
        da = np.empty_like(a)
        for i in range(r):
            da[:, i, :] = np.einsum("nlc,nlc->nc", dy, u[..., i * c:(i + 1) * c])
        d_logits = (a * (da - np.sum(da * a, axis=1, keepdims=True))).reshape(n, r * c)
        v2m = self.v2.value * self.mask_v2
        grads[self.v2] = (h.T @ d_logits) * self.mask_v2
        grads[self.c2] = d_logits.sum(axis=0)
        d_pre = (d_logits @ v2m.T) * (pre > 0)
        v1m = self.v1.value * self.mask_v1
        grads[self.v1] = (s.T @ d_pre) * self.mask_v1
        grads[self.c1] = d_pre.sum(axis=0)
        ds = (d_pre @ v1m.T) / length
        dz = np.empty_like(z)
        for i in range(r):
            dz[..., i * c:(i + 1) * c] = a[:, None, i, :] * dy + ds[:, None, :]
        dz *= z > 0
        dz2 = dz.reshape(-1, r * c)
        grads[self.w] = (x.reshape(-1, self.c_in).T @ dz2) * self.mask_w
        grads[self.b] = dz2.sum(axis=0)
        dx += dz @ (self.w.value * self.mask_w).T
        return (dx,), grads


class _ToLengthMajor(Layer):
    """(N, C, L) -> (N, L, C)."""

    def forward(self, x):
        return np.ascontiguousarray(x.transpose(0, 2, 1)), None

    def backward(self, _, dy):
        return (np.ascontiguousarray(dy.transpose(0, 2, 1)),), {}


class SplitAttentionBandit(Model):
    """Channel projection -> stacked split-attention blocks -> length pooling -> MLP head."""

    kind = "resnest"

    def __init__(self, dims: dict[str, int], features: str = "personalized", length: int = 64,
                 width: int = 8, blocks: int = 2, radix: int = 2, cardinality: int = 1,
                 bottleneck: int = 8, head_hidden: int = 32, seed: int = 0):
        super().__init__(dict(dims=dict(dims), features=features, length=length, width=width, blocks=blocks,
                              radix=radix, cardinality=cardinality, bottleneck=bottleneck,
                              head_hidden=head_hidden, seed=seed))
        rng = np.random.default_rng(seed)
        self.channels = CHANNEL_SETS[features]
        self.projection = ChannelProjection({k: dims[k] for k in self.channels}, length, rng)
        self.blocks = []
        c_in = len(self.channels)
        for i in range(blocks):
            self.blocks.append(SplitAttention(c_in, width, rng, radix=radix,
                                              cardinality=cardinality if c_in % cardinality == 0 else 1,
                                              bottleneck=bottleneck, name=f"block{i}"))
            c_in = width
        self.head = MLP([c_in, head_hidden, 1], rng, name="head")
        self._layout = _ToLengthMajor()
        self._pool = GlobalAvgPool(axis=1)
        self._squeeze = Squeeze()

    def parameters(self):
        ps = self.projection.parameters()
        for blk in self.blocks:
            ps += blk.parameters()
        return ps + self.head.parameters()

    def channel_map(self, tape: GradientTape, batch: FeatureBatch) -> Node:
        return tape.apply(self.projection, *(tape.constant(batch.channel(k)) for k in self.channels))

    def forward_map(self, tape: GradientTape, fmap: Node) -> Node:
        x = tape.apply(self._layout, fmap)
        for blk in self.blocks:
            x = tape.apply(blk, x)
        pooled = tape.apply(self._pool, x)
        return tape.apply(self._squeeze, self.head(tape, pooled))

    def forward(self, tape: GradientTape, batch: FeatureBatch) -> Node:
        return self.forward_map(tape, self.channel_map(tape, batch))

    def predict_map(self, fmap: np.ndarray) -> np.ndarray:
        """Score precomputed ``(N, C, L)`` channel maps."""
        fmap = np.asarray(fmap, dtype=np.float64)
        if fmap.ndim == 2:
            fmap = fmap[None]
        if fmap.shape[1:] != (len(self.channels), self.projection.length):
            raise DimensionError(f"channel map shape {fmap.shape[1:]} vs "
                                 f"({len(self.channels)}, {self.projection.length})")
        tape = GradientTape(record=False)
        return self.forward_map(tape, tape.constant(fmap)).value
