from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..features import FeatureStore
from .base import Model
from .linear import LinearBandit


@dataclass(frozen=True)
class RankingRequest:
    customer_id: str
    customer_context: Mapping
    shopping_context: Mapping
    candidates: tuple[str, ...]
    k: int = 5

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("ranking request has no candidates")
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")


@dataclass(frozen=True)
class RankedEntry:
    widget_id: str
    score: float
    explored: bool = False


@dataclass
class RankedList:
    entries: list[RankedEntry]
    excluded: list[tuple[str, str]] = field(default_factory=list)

    @property
    def widget_ids(self) -> list[str]:
        return [e.widget_id for e in self.entries]

    def __len__(self):
        return len(self.entries)


def order_by_score(widget_ids: Sequence[str], scores: Sequence[float]) -> list[int]:
    """Descending score, ties by ascending widget id."""
    return sorted(range(len(widget_ids)), key=lambda i: (-scores[i], widget_ids[i]))


def select_top_k(widget_ids: Sequence[str], scores, k: int, epsilon: float = 0.0,
                 rng: np.random.Generator | None = None) -> list[RankedEntry]:
    """Greedy order with per-slot epsilon exploration.

    At each slot, with probability ``epsilon`` the entry is drawn uniformly
    from the candidates not yet placed instead of taking the best remaining.
    """
    scores = [float(s) for s in scores]
    remaining = order_by_score(widget_ids, scores)
    out = []
    for _ in range(min(k, len(remaining))):
        explore = epsilon > 0 and rng is not None and rng.random() < epsilon
        j = int(rng.integers(len(remaining))) if explore else 0
        i = remaining.pop(j)
        out.append(RankedEntry(widget_ids[i], scores[i], explore))
    return out


def score_candidates(model: Model, store: FeatureStore, request: RankingRequest,
                     thompson: bool = False, rng: np.random.Generator | None = None):
    ok, betas, excluded = [], [], []
    for wid in request.candidates:
        try:
            betas.append(store.beta(request.customer_context, request.shopping_context, wid))
            ok.append(wid)
        except (KeyError, ValueError) as exc:
            excluded.append((wid, str(exc)))
    if not ok:
        return [], np.zeros(0), excluded
    rows = [store.widget_row(w) for w in ok]
    cust = [store.customer_row(request.customer_id)] * len(ok)
    batch = store.batch(cust, rows, np.stack(betas))
    if thompson:
        if not isinstance(model, LinearBandit):
            raise TypeError("Thompson exploration requires the linear bandit")
        scores = model.thompson_scores(batch, rng or np.random.default_rng())
    else:
        scores = model.predict(batch)
    return ok, scores, excluded


def rank_candidates(model: Model, store: FeatureStore, request: RankingRequest,
                    exploration: Mapping | None = None, rng: np.random.Generator | None = None) -> RankedList:
    """Score every candidate and return the top ``K``.

    ``exploration`` is ``{"epsilon": e}`` or ``{"thompson": True}``; ``None``
    means pure exploitation. Candidates whose features cannot be built are
    listed in ``excluded`` with the reason.
    """
    exploration = dict(exploration or {})
    thompson = bool(exploration.get("thompson", False))
    epsilon = float(exploration.get("epsilon", 0.0))
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    ids, scores, excluded = score_candidates(model, store, request, thompson, rng)
    entries = select_top_k(ids, scores, request.k, epsilon, rng)
    return RankedList(entries, excluded)
