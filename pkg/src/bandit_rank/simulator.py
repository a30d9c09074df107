"""Synthetic shopper environment with a planted customer/content affinity.

Every customer carries a hidden goal vector ``u`` in category space. Past
engagements are drawn toward categories aligned with ``u``; clicks on a shown
widget follow a position-biased logistic in ``cos(u, gamma)``; a click earns a
lognormal down-session value scaled by the same alignment. Because the click
model integrates in closed form, :func:`oracle_rank` needs no simulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .embeddings import (
    Catalog,
    ContentWidget,
    EmbeddingTable,
    EngagementEvent,
    Product,
    assign_categories,
    category_id,
    content_representation,
    product_id,
)
from .models.ranking import RankedEntry, RankedList, RankingRequest, select_top_k, order_by_score
from .nn import sigmoid

SLOTS = 5
WIDGET_TYPES = ("deals", "buy_again", "bought_together", "similar_items", "trending")
REGIONS = ("north", "south", "east", "west")
PAGE_TYPES = ("home", "detail", "search")
EVENT_MIX = (("view", 0.7), ("click", 0.2), ("purchase", 0.1))
HISTORY_SPAN = 30 * 24 * 3600.0
DEFAULT_NOW = 1_700_000_000.0


@dataclass(frozen=True)
class ClickModel:
    affinity: float = 4.0
    position_bias: tuple[float, ...] = (1.0, 0.75, 0.55, 0.4, 0.3)
    base_logit: float = -1.5
    reward_mu: float = 1.0
    reward_sigma: float = 0.5
    attribution_window: float = 1800.0

    def __post_init__(self):
        if self.affinity < 0:
            raise ValueError("affinity must be >= 0")
        pb = np.asarray(self.position_bias)
        # zeros are allowed after slot 1 so a page can switch lower slots off
        if pb.shape != (SLOTS,) or pb[0] <= 0 or np.any(pb < 0) or np.any(pb > 1) or np.any(np.diff(pb) > 0):
            raise ValueError("position_bias must be 5 non-increasing entries in [0, 1] with slot 1 > 0")

    def click_probability(self, slot: int, cos):
        return self.position_bias[slot - 1] * sigmoid(self.affinity * np.asarray(cos) + self.base_logit)

    def reward_scale(self, cos):
        return (1.0 + np.asarray(cos)) / 2.0

    def expected_value(self, cos, slot: int = 1):
        mean_lognormal = np.exp(self.reward_mu + 0.5 * self.reward_sigma**2)
        return self.click_probability(slot, cos) * mean_lognormal * self.reward_scale(cos)


@dataclass
class SyntheticCustomer:
    customer_id: str
    u: np.ndarray
    price_sensitivity: float
    prime_member: bool
    signed_in: bool
    region: str
    history: list[EngagementEvent] = field(default_factory=list)

    def context(self) -> dict:
        n = len(self.history)
        bucket = "0" if n == 0 else "30+" if n >= 30 else f"{(n // 10) * 10}-{(n // 10) * 10 + 9}"
        return {"signed_in": self.signed_in, "prime_member": self.prime_member, "recent_event_counts": bucket}


@dataclass(frozen=True)
class RewardRecord:
    impression_id: int
    customer_id: str
    widget_id: str
    slot: int
    clicked: bool
    reward: float
    attribution_window: float

    @property
    def engagement_reward(self) -> float:
        return self.reward if self.clicked else 0.0


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def build_catalog(n_categories: int, n_products: int, n_brands: int, seed: int) -> Catalog:
    cats = assign_categories(n_products, n_categories, seed)
    rng = np.random.default_rng([seed, 2])
    brands = rng.integers(n_brands, size=n_products)
    return Catalog(Product(product_id(i), category_id(int(c)), f"b{int(b):03d}")
                   for i, (c, b) in enumerate(zip(cats, brands)))


def build_widgets(n_widgets: int, catalog: Catalog, seed: int, products_per_widget: int = 4,
                  n_groups: int = 3) -> list[ContentWidget]:
    """Each widget centres on one category, so widgets differ in content space."""
    rng = np.random.default_rng([seed, 3])
    by_cat: dict[str, list[str]] = {}
    for p in catalog.products.values():
        by_cat.setdefault(p.category_id, []).append(p.product_id)
    cats = sorted(by_cat)
    all_products = sorted(catalog.products)
    widgets = []
    for i in range(n_widgets):
        focus = by_cat[cats[int(rng.integers(len(cats)))]]
        take = min(len(focus), products_per_widget)
        chosen = list(rng.choice(focus, size=take, replace=False))
        while len(chosen) < products_per_widget:
            chosen.append(all_products[int(rng.integers(len(all_products)))])
        wid = f"w{i:03d}"
        wtype = WIDGET_TYPES[i % len(WIDGET_TYPES)]
        widgets.append(ContentWidget(wid, wtype, tuple(chosen), {"widget_id": wid, "widget_type": wtype}))
    return widgets


def widget_group(widget: ContentWidget, n_groups: int = 3) -> str:
    return f"g{int(widget.widget_id[1:]) % n_groups}"


def generate_population(n_customers: int, catalog: Catalog, tables: tuple[EmbeddingTable, EmbeddingTable],
                        seed: int, now: float = DEFAULT_NOW, mean_events: float = 20.0,
                        temperature: float = 0.2) -> list[SyntheticCustomer]:
    if n_customers < 1:
        raise ValueError("n_customers must be >= 1")
    cat_table = tables[0]
    rng = np.random.default_rng([seed, 4])
    pids = sorted(catalog.products)
    prod_cat = cat_table.matrix[[cat_table.row(catalog[p].category_id) for p in pids]]
    kinds = [k for k, _ in EVENT_MIX]
    kind_p = [p for _, p in EVENT_MIX]
    out = []
    for i in range(n_customers):
        u = _unit_rows(rng.standard_normal(cat_table.dim))
        logits = (prod_cat @ u) / temperature
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        cid = f"u{i:05d}"
        n_events = int(rng.poisson(mean_events))
        picks = rng.choice(len(pids), size=n_events, p=probs)
        types = rng.choice(len(kinds), size=n_events, p=kind_p)
        stamps = np.sort(now - HISTORY_SPAN * rng.random(n_events))
        history = [EngagementEvent(cid, pids[j], kinds[t], float(ts)) for j, t, ts in zip(picks, types, stamps)]
        out.append(SyntheticCustomer(
            customer_id=cid, u=u,
            price_sensitivity=float(rng.random()),
            prime_member=bool(rng.random() < 0.4),
            signed_in=bool(rng.random() < 0.85),
            region=REGIONS[int(rng.integers(len(REGIONS)))],
            history=history,
        ))
    return out


def simulate_impression(customer: SyntheticCustomer, ranked: RankedList, gammas: Mapping[str, np.ndarray],
                        click_model: ClickModel, rng: np.random.Generator,
                        impression_id: int = 0) -> list[RewardRecord]:
    if len(ranked) > SLOTS:
        raise ValueError(f"page has {SLOTS} slots, got {len(ranked)} entries")
    out = []
    for slot, entry in enumerate(ranked.entries, start=1):
        cos = float(customer.u @ gammas[entry.widget_id])
        p = float(click_model.click_probability(slot, cos))
        clicked = bool(rng.random() < p)
        reward = 0.0
        if clicked:
            reward = float(rng.lognormal(click_model.reward_mu, click_model.reward_sigma)
                           * click_model.reward_scale(cos))
        out.append(RewardRecord(impression_id, customer.customer_id, entry.widget_id, slot, clicked, reward,
                                click_model.attribution_window))
    return out


def oracle_rank(customer: SyntheticCustomer, candidates: Sequence[str], click_model: ClickModel,
                gammas: Mapping[str, np.ndarray]) -> RankedList:
    if not candidates:
        raise ValueError("no candidates")
    values = [float(click_model.expected_value(float(customer.u @ gammas[w]))) for w in candidates]
    order = order_by_score(list(candidates), values)
    return RankedList([RankedEntry(candidates[i], values[i]) for i in order])


@dataclass
class Environment:
    catalog: Catalog
    tables: tuple[EmbeddingTable, EmbeddingTable]
    widgets: list[ContentWidget]
    customers: list[SyntheticCustomer]
    click_model: ClickModel
    now: float = DEFAULT_NOW
    n_groups: int = 3

    def __post_init__(self):
        self.widget_map = {w.widget_id: w for w in self.widgets}
        self.gammas = {w.widget_id: content_representation(w, self.catalog, self.tables[0]).gamma
                       for w in self.widgets}
        self.customer_map = {c.customer_id: c for c in self.customers}
        self.groups: dict[str, list[str]] = {}
        for w in self.widgets:
            self.groups.setdefault(widget_group(w, self.n_groups), []).append(w.widget_id)

    @property
    def histories(self) -> dict[str, list[EngagementEvent]]:
        return {c.customer_id: c.history for c in self.customers}

    def context_values(self) -> dict[str, list]:
        """Every value each context key can take in this environment."""
        return {
            "signed_in": [False, True],
            "prime_member": [False, True],
            "recent_event_counts": sorted({c.context()["recent_event_counts"] for c in self.customers}),
            "region": list(REGIONS),
            "page_type": list(PAGE_TYPES),
            "widget_group_id": sorted(self.groups),
            "widget_id": sorted(self.widget_map),
            "widget_type": list(WIDGET_TYPES),
        }

    def sample_request(self, rng: np.random.Generator, k: int = SLOTS) -> RankingRequest:
        customer = self.customers[int(rng.integers(len(self.customers)))]
        group = sorted(self.groups)[int(rng.integers(len(self.groups)))]
        candidates = self.groups[group] if len(self.groups[group]) >= k else sorted(self.widget_map)
        shopping = {"region": customer.region, "page_type": PAGE_TYPES[int(rng.integers(len(PAGE_TYPES)))],
                    "widget_group_id": group}
        return RankingRequest(customer.customer_id, customer.context(), shopping, tuple(candidates), k)


Policy = Callable[[RankingRequest, np.random.Generator], RankedList]


def uniform_policy(request: RankingRequest, rng: np.random.Generator) -> RankedList:
    """Logging policy that shows a uniformly random ordered subset."""
    ids = list(request.candidates)
    return RankedList(select_top_k(ids, np.zeros(len(ids)), request.k, epsilon=1.0, rng=rng))


class EpisodeError(RuntimeError):
    pass


def request_to_json(request: RankingRequest) -> dict:
    return {
        "customer_id": request.customer_id,
        "customer_context": dict(request.customer_context),
        "shopping_context": dict(request.shopping_context),
        "candidates": list(request.candidates),
        "k": request.k,
    }


def run_episode_batch(policy: Policy, env: Environment, n_impressions: int, seed: int,
                      first_impression: int = 0) -> list[dict]:
    """Run ``n_impressions`` requests through ``policy`` and the click model.

    Returns one JSON-ready record per shown slot, in impression then slot order.
    """
    if n_impressions < 1:
        raise ValueError("n_impressions must be >= 1")
    rng = np.random.default_rng([seed, 5])
    records = []
    for i in range(first_impression, first_impression + n_impressions):
        request = env.sample_request(rng)
        try:
            ranked = policy(request, rng)
        except Exception as exc:
            raise EpisodeError(f"policy failed on impression {i} for customer {request.customer_id}: {exc}") from exc
        customer = env.customer_map[request.customer_id]
        rewards = simulate_impression(customer, ranked, env.gammas, env.click_model, rng, impression_id=i)
        req = request_to_json(request)
        for entry, rec in zip(ranked.entries, rewards):
            records.append({
                "impression_id": i,
                **req,
                "slot": rec.slot,
                "widget_id": entry.widget_id,
                "score": float(entry.score),
                "explored": bool(entry.explored),
                "clicked": rec.clicked,
                "reward": rec.reward,
                "attribution_window": rec.attribution_window,
            })
    return records
