"""Categorical context hashing, channel maps, and batched feature assembly."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .embeddings import (
    DEFAULT_HALF_LIFE,
    Catalog,
    ContentRepresentation,
    ContentWidget,
    CustomerRepresentation,
    EmbeddingTable,
    EngagementEvent,
    UnknownIdError,
    aggregate_customer,
    content_representation,
)
from .nn import DimensionError, Layer, Parameter, glorot_uniform

CUSTOMER_KEYS = ("signed_in", "prime_member", "recent_event_counts")
SHOPPING_KEYS = ("region", "page_type", "widget_group_id", "page_item", "search_query")
CONTENT_KEYS = ("widget_id", "widget_type")
DEFAULT_CROSS_PAIRS = (
    ("page_type", "widget_group_id"),
    ("prime_member", "widget_type"),
    ("page_type", "widget_type"),
)
CHANNELS = ("beta", "lambda", "tau", "gamma")
HISTORY_LENGTH = 50
EVENT_DIM = 32


class SchemaError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "schema error"


@lru_cache(maxsize=1 << 16)
def hash_token(token: str, d: int, seed: int) -> tuple[int, float]:
    """Bucket in ``[0, d)`` and sign for one token; two independent keyed hashes."""
    key = seed.to_bytes(8, "little", signed=True)
    h_bucket = hashlib.blake2b(token.encode(), digest_size=8, key=key, person=b"bucket").digest()
    h_sign = hashlib.blake2b(token.encode(), digest_size=8, key=key, person=b"sign").digest()
    bucket = int.from_bytes(h_bucket, "little") % d
    sign = 1.0 if h_sign[0] & 1 else -1.0
    return bucket, sign


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


@dataclass(frozen=True)
class CategoricalFeature:
    beta: np.ndarray


@dataclass(frozen=True)
class HashingEncoder:
    """Signed feature hashing of (C, X, Z) unigrams plus registered cross pairs."""

    d_beta: int = 128
    hash_seed: int = 0
    cross_pairs: tuple[tuple[str, str], ...] = DEFAULT_CROSS_PAIRS
    customer_keys: tuple[str, ...] = CUSTOMER_KEYS
    shopping_keys: tuple[str, ...] = SHOPPING_KEYS
    content_keys: tuple[str, ...] = CONTENT_KEYS

    def __post_init__(self):
        if self.d_beta < 16:
            raise ValueError(f"d_beta must be >= 16, got {self.d_beta}")
        known = set(self.customer_keys) | set(self.shopping_keys) | set(self.content_keys)
        for a, b in self.cross_pairs:
            for k in (a, b):
                if k not in known:
                    raise SchemaError(f"cross pair uses unregistered key {k!r}")

    def _check(self, ctx: Mapping, allowed: Sequence[str], label: str):
        for k in ctx:
            if k not in allowed:
                raise SchemaError(f"unregistered {label} context key {k!r}")

    def tokens(self, c: Mapping, x: Mapping, z: Mapping) -> list[str]:
        self._check(c, self.customer_keys, "customer")
        self._check(x, self.shopping_keys, "shopping")
        self._check(z, self.content_keys, "content")
        merged = {**c, **x, **z}
        out = [f"{k}={_fmt(merged[k])}" for k in sorted(merged)]
        for a, b in self.cross_pairs:
            if a in merged and b in merged:
                out.append(f"{a}={_fmt(merged[a])}^{b}={_fmt(merged[b])}")
        return out

    def encode(self, c: Mapping, x: Mapping, z: Mapping) -> CategoricalFeature:
        beta = np.zeros(self.d_beta)
        for tok in self.tokens(c, x, z):
            bucket, sign = hash_token(tok, self.d_beta, self.hash_seed)
            beta[bucket] += sign
        return CategoricalFeature(beta)


def build_categorical_feature(c: Mapping, x: Mapping, z: Mapping, d_beta: int = 128, hash_seed: int = 0,
                              cross_pairs=DEFAULT_CROSS_PAIRS) -> CategoricalFeature:
    return HashingEncoder(d_beta, hash_seed, tuple(cross_pairs)).encode(c, x, z)


def collision_report(tokens: Sequence[str], d: int, seed: int) -> dict:
    """Collision statistics of a token vocabulary under :func:`hash_token`.

    ``pair_collision_rate`` is the fraction of distinct token pairs that share a
    bucket. ``token_collision_rate`` is the fraction of tokens whose bucket is
    shared with at least one other token.
    """
    vocab = sorted(set(tokens))
    buckets = np.array([hash_token(t, d, seed)[0] for t in vocab])
    counts = np.bincount(buckets, minlength=d)
    n = len(vocab)
    colliding_pairs = int(np.sum(counts * (counts - 1) // 2))
    total_pairs = n * (n - 1) // 2
    return {
        "n_tokens": n,
        "d": d,
        "colliding_pairs": colliding_pairs,
        "pair_collision_rate": colliding_pairs / total_pairs if total_pairs else 0.0,
        "token_collision_rate": float(np.sum(counts[counts > 1])) / n if n else 0.0,
    }


def vocabulary(encoder: HashingEncoder, values: Mapping[str, Sequence]) -> list[str]:
    """Every unigram and cross token reachable from per-key value sets."""
    out = [f"{k}={_fmt(v)}" for k, vs in values.items() for v in vs]
    for a, b in encoder.cross_pairs:
        for va in values.get(a, ()):
            for vb in values.get(b, ()):
                out.append(f"{a}={_fmt(va)}^{b}={_fmt(vb)}")
    return out


def hash_event(event_type: str, category: str, brand: str, d: int = EVENT_DIM, seed: int = 0) -> np.ndarray:
    """Signed-hash encoding of one engagement's categorical descriptors."""
    v = np.zeros(d)
    for tok in (f"event_type={event_type}", f"category={category}", f"brand={brand}",
                f"event_type={event_type}^category={category}"):
        bucket, sign = hash_token(tok, d, seed)
        v[bucket] += sign
    return v


@dataclass(frozen=True)
class ChannelFeatureMap:
    channels: tuple[str, ...]
    data: np.ndarray  # (C, L)

    @property
    def length(self) -> int:
        return self.data.shape[1]

    def row(self, name: str) -> np.ndarray:
        return self.data[self.channels.index(name)]


class ChannelProjection(Layer):
    """Projects each source feature to length ``L`` and stacks them as channels.

    Inputs are one array per channel, each ``(N, d_source)``; output is
    ``(N, C, L)``. Projections carry no bias so a zero input maps to zero.
    Inputs are raw features, so their gradients are skipped unless
    ``input_grads`` is set.
    """

    def __init__(self, source_dims: Mapping[str, int], length: int, rng: np.random.Generator,
                 input_grads: bool = False):
        self.channels = tuple(source_dims)
        self.length = length
        self.input_grads = input_grads
        self.weights = [Parameter(glorot_uniform(d, length, rng), f"proj.{name}")
                        for name, d in source_dims.items()]

    def parameters(self):
        return list(self.weights)

    def forward(self, *xs):
        if len(xs) != len(self.weights):
            raise DimensionError(f"expected {len(self.weights)} channel inputs, got {len(xs)}")
        rows = []
        for name, x, w in zip(self.channels, xs, self.weights):
            if x.shape[-1] != w.value.shape[0]:
                raise DimensionError(f"channel {name}: input dim {x.shape[-1]} vs projection {w.value.shape}")
            rows.append(x @ w.value)
        return np.stack(rows, axis=1), xs

    def backward(self, xs, dy):
        grads, dxs = {}, []
        for c, (x, w) in enumerate(zip(xs, self.weights)):
            dyc = np.ascontiguousarray(dy[:, c, :])
            grads[w] = x.T @ dyc
            dxs.append(dyc @ w.value.T if self.input_grads else None)
        return tuple(dxs), grads


def build_channel_map(beta: CategoricalFeature, rep: CustomerRepresentation, gamma: ContentRepresentation,
                      projections: ChannelProjection, L: int | None = None) -> ChannelFeatureMap:
    if L is not None and L != projections.length:
        raise DimensionError(f"requested L={L} but projections map to {projections.length}")
    sources = {"beta": beta.beta, "lambda": rep.lam, "tau": rep.tau, "gamma": gamma.gamma}
    xs = [np.asarray(sources[name], dtype=np.float64)[None, :] for name in projections.channels]
    data, _ = projections.forward(*xs)
    return ChannelFeatureMap(projections.channels, data[0])


@dataclass
class FeatureBatch:
    beta: np.ndarray
    lam: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    hist_item: np.ndarray
    hist_cat: np.ndarray
    hist_mask: np.ndarray

    def __len__(self):
        return self.beta.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return {"beta": self.beta, "lambda": self.lam, "tau": self.tau, "gamma": self.gamma}[name]


class FeatureStore:
    """Precomputed per-customer and per-widget features over a fixed environment.

    Customer representations and histories are computed once. Customers not in
    ``histories`` are cold-start: zero representations and an empty history.
    """

    def __init__(self, catalog: Catalog, tables: tuple[EmbeddingTable, EmbeddingTable],
                 widgets: Sequence[ContentWidget], histories: Mapping[str, Sequence[EngagementEvent]],
                 encoder: HashingEncoder, now: float, half_life: float = DEFAULT_HALF_LIFE,
                 type_weights=None, history_length: int = HISTORY_LENGTH, event_dim: int = EVENT_DIM):
        self.catalog = catalog
        self.tables = tables
        self.encoder = encoder
        self.now = now
        self.history_length = history_length
        self.event_dim = event_dim
        cat_table, item_table = tables

        self.widgets = {w.widget_id: w for w in widgets}
        self.widget_ids = tuple(sorted(self.widgets))
        self.widget_index = {w: i for i, w in enumerate(self.widget_ids)}
        self.gamma = np.stack([content_representation(self.widgets[w], catalog, cat_table).gamma
                               for w in self.widget_ids]) if widgets else np.zeros((0, cat_table.dim))

        self.customer_ids = tuple(histories)
        self.customer_index = {c: i for i, c in enumerate(self.customer_ids)}
        n = len(self.customer_ids) + 1  # last row is the cold-start customer
        self.lam = np.zeros((n, cat_table.dim))
        self.tau = np.zeros((n, item_table.dim))
        self.hist_item = np.zeros((n, history_length, item_table.dim))
        self.hist_cat = np.zeros((n, history_length, event_dim))
        self.hist_mask = np.zeros((n, history_length), dtype=bool)
        for i, cid in enumerate(self.customer_ids):
            events = list(histories[cid])
            rep = aggregate_customer(events, catalog, tables, now, half_life, type_weights)
            self.lam[i], self.tau[i] = rep.lam, rep.tau
            recent = sorted(events, key=lambda e: e.timestamp)[-history_length:]
            for j, e in enumerate(recent):
                prod = catalog[e.product_id]
                self.hist_item[i, j] = item_table.lookup(e.product_id)
                self.hist_cat[i, j] = hash_event(e.event_type, prod.category_id, prod.brand_id, event_dim)
                self.hist_mask[i, j] = True
        self._beta_cache: dict = {}

    @property
    def cold_start_row(self) -> int:
        return len(self.customer_ids)

    def customer_row(self, customer_id: str) -> int:
        return self.customer_index.get(customer_id, self.cold_start_row)

    def widget_row(self, widget_id: str) -> int:
        try:
            return self.widget_index[widget_id]
        except KeyError:
            raise UnknownIdError(f"unknown widget id {widget_id!r}") from None

    def beta(self, customer_context: Mapping, shopping_context: Mapping, widget_id: str) -> np.ndarray:
        w = self.widgets.get(widget_id)
        if w is None:
            raise UnknownIdError(f"unknown widget id {widget_id!r}")
        key = (tuple(sorted(customer_context.items())), tuple(sorted(shopping_context.items())), widget_id)
        hit = self._beta_cache.get(key)
        if hit is None:
            hit = self.encoder.encode(customer_context, shopping_context, w.content_context).beta
            self._beta_cache[key] = hit
        return hit

    def batch(self, customer_rows, widget_rows, beta) -> FeatureBatch:
        c = np.asarray(customer_rows)
        w = np.asarray(widget_rows)
        return FeatureBatch(
            beta=np.asarray(beta, dtype=np.float64),
            lam=self.lam[c], tau=self.tau[c], gamma=self.gamma[w],
            hist_item=self.hist_item[c], hist_cat=self.hist_cat[c], hist_mask=self.hist_mask[c],
        )


@dataclass
class Dataset:
    """Training/evaluation rows: one per shown (impression, slot)."""

    store: FeatureStore
    customer_rows: np.ndarray
    widget_rows: np.ndarray
    beta: np.ndarray
    reward: np.ndarray
    clicked: np.ndarray
    impression: np.ndarray
    slot: np.ndarray
    customer_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.reward)

    def batch(self, idx=None) -> FeatureBatch:
        if idx is None:
            idx = slice(None)
        return self.store.batch(self.customer_rows[idx], self.widget_rows[idx], self.beta[idx])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.store, self.customer_rows[idx], self.widget_rows[idx], self.beta[idx],
                       self.reward[idx], self.clicked[idx], self.impression[idx], self.slot[idx],
                       [self.customer_ids[i] for i in idx] if self.customer_ids else [])
