"""Synthetic product embedding tables and the customer/content aggregates built on them.

Category vectors live on the unit sphere in ``d_cat`` dimensions. Each item
vector is its category vector lifted into ``d_item`` dimensions plus a little
Gaussian noise, so items of one category cluster together. Customers are
summarised by time-decayed, engagement-weighted means of the vectors of the
products they touched; widgets by the plain mean of their products' category
vectors, which puts customers and content in one space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

EVENT_TYPES = ("view", "click", "purchase")
DEFAULT_TYPE_WEIGHTS = {"view": 1.0, "click": 2.0, "purchase": 4.0}
DEFAULT_HALF_LIFE = 7 * 24 * 3600.0
ITEM_NOISE_SIGMA = 0.1


class UnknownIdError(KeyError):
    """Lookup of an identifier that is not in a table or catalog."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown id"


@dataclass(frozen=True)
class Product:
    product_id: str
    category_id: str
    brand_id: str


@dataclass(frozen=True)
class EngagementEvent:
    customer_id: str
    product_id: str
    event_type: str
    timestamp: float

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise ValueError(f"event_type must be one of {EVENT_TYPES}, got {self.event_type!r}")
        if not self.timestamp > 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")


@dataclass(frozen=True)
class ContentWidget:
    widget_id: str
    widget_type: str
    product_ids: tuple[str, ...]
    content_context: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.product_ids:
            raise ValueError(f"widget {self.widget_id} has no products")


@dataclass(frozen=True)
class CustomerRepresentation:
    lam: np.ndarray
    tau: np.ndarray


@dataclass(frozen=True)
class ContentRepresentation:
    gamma: np.ndarray


class EmbeddingTable:
    """Immutable id -> vector map backed by one contiguous matrix."""

    def __init__(self, level: str, ids: Sequence[str], matrix: np.ndarray):
        if level not in ("category", "item"):
            raise ValueError(f"level must be 'category' or 'item', got {level!r}")
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValueError(f"matrix shape {matrix.shape} does not match {len(ids)} ids")
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms <= 0) or np.any(norms > 10):
            raise ValueError("embedding norms must lie in (0, 10]")
        matrix.setflags(write=False)
        self.level = level
        self.ids = tuple(ids)
        self.matrix = matrix
        self.index = {k: i for i, k in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, key):
        return key in self.index

    def row(self, key: str) -> int:
        try:
            return self.index[key]
        except KeyError:
            raise UnknownIdError(f"unknown {self.level} id {key!r}") from None

    def lookup(self, key: str) -> np.ndarray:
        return self.matrix[self.row(key)]


class Catalog:
    def __init__(self, products: Iterable[Product]):
        self.products: dict[str, Product] = {}
        for p in products:
            if p.product_id in self.products:
                raise ValueError(f"duplicate product id {p.product_id!r}")
            if not p.category_id:
                raise ValueError(f"product {p.product_id!r} has no category")
            self.products[p.product_id] = p

    def __len__(self):
        return len(self.products)

    def __contains__(self, pid):
        return pid in self.products

    def __getitem__(self, pid: str) -> Product:
        try:
            return self.products[pid]
        except KeyError:
            raise UnknownIdError(f"unknown product id {pid!r}") from None


def category_id(j: int) -> str:
    return f"cat{j:03d}"


def product_id(i: int) -> str:
    return f"p{i:05d}"


def assign_categories(n_items: int, n_categories: int, seed: int) -> np.ndarray:
    """Category index per item; every category gets an item when there are enough items."""
    rng = np.random.default_rng([seed, 1])
    base = np.arange(min(n_items, n_categories))
    extra = rng.integers(n_categories, size=max(0, n_items - n_categories))
    out = np.concatenate([base, extra])
    rng.shuffle(out)
    return out


def build_synthetic_tables(n_categories: int, n_items: int, d_cat: int, d_item: int,
                           seed: int) -> tuple[EmbeddingTable, EmbeddingTable]:
    if n_categories < 1 or n_items < 1:
        raise ValueError("n_categories and n_items must be >= 1")
    if d_cat < 2 or d_item < 2:
        raise ValueError("embedding dims must be >= 2")
    rng = np.random.default_rng([seed, 0])
    cat = rng.standard_normal((n_categories, d_cat))
    cat /= np.linalg.norm(cat, axis=1, keepdims=True)

    if d_item >= d_cat:
        lift = np.eye(d_cat, d_item)
    else:
        lift = rng.standard_normal((d_cat, d_item)) / np.sqrt(d_item)
    cats_of_items = assign_categories(n_items, n_categories, seed)
    items = cat[cats_of_items] @ lift
    items = items / np.linalg.norm(items, axis=1, keepdims=True)
    items = items + ITEM_NOISE_SIGMA * rng.standard_normal(items.shape)
    items /= np.linalg.norm(items, axis=1, keepdims=True)

    cat_table = EmbeddingTable("category", [category_id(j) for j in range(n_categories)], cat)
    item_table = EmbeddingTable("item", [product_id(i) for i in range(n_items)], items)
    return cat_table, item_table


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


def event_weights(events: Sequence[EngagementEvent], now: float, half_life: float,
                  type_weights: Mapping[str, float] | None = None) -> np.ndarray:
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    tw = type_weights or DEFAULT_TYPE_WEIGHTS
    ages = np.array([now - e.timestamp for e in events], dtype=np.float64)
    kinds = np.array([tw[e.event_type] for e in events], dtype=np.float64)
    return kinds * np.exp2(-ages / half_life)


def aggregate_customer(events: Sequence[EngagementEvent], catalog: Catalog,
                       tables: tuple[EmbeddingTable, EmbeddingTable], now: float,
                       half_life: float = DEFAULT_HALF_LIFE,
                       type_weights: Mapping[str, float] | None = None) -> CustomerRepresentation:
    cat_table, item_table = tables
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    if not events:
        return CustomerRepresentation(np.zeros(cat_table.dim), np.zeros(item_table.dim))
    owners = {e.customer_id for e in events}
    if len(owners) > 1:
        raise ValueError(f"events belong to several customers: {sorted(owners)}")
    cat_rows = [cat_table.row(catalog[e.product_id].category_id) for e in events]
    item_rows = [item_table.row(e.product_id) for e in events]
    w = event_weights(events, now, half_life, type_weights)
    w = w / w.sum()
    lam = w @ cat_table.matrix[cat_rows]
    tau = w @ item_table.matrix[item_rows]
    return CustomerRepresentation(_unit(lam), _unit(tau))


def content_representation(widget: ContentWidget, catalog: Catalog,
                           category_table: EmbeddingTable) -> ContentRepresentation:
    rows = [category_table.row(catalog[pid].category_id) for pid in widget.product_ids]
    return ContentRepresentation(_unit(category_table.matrix[rows].mean(axis=0)))
