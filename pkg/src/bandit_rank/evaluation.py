"""Regression and ranking metrics, model selection, and baseline-relative reports."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .nn import mae_loss, mse_loss

CUTOFF = 5
SKIP = None  # returned by ndcg_at_5 when the ideal DCG is zero


def dcg_at_5(re: Sequence[float]) -> float:
    re = [float(v) for v in re][:CUTOFF]
    if any(v < 0 for v in re):
        raise ValueError("engagement rewards must be non-negative")
    return sum(v / math.log2(i + 1) for i, v in enumerate(re, start=1))


def ndcg_at_5(ranked_re: Sequence[float], all_re: Sequence[float]):
    """DCG of the model's order over DCG of the descending order; ``SKIP`` if the latter is zero."""
    ideal = dcg_at_5(sorted(all_re, reverse=True))
    if ideal == 0:
        return SKIP
    return dcg_at_5(ranked_re) / ideal


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    mae: float
    ndcg_at_5: float
    n_users_counted: int
    n_users_skipped: int
    n_rows: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def ranking_metrics(pred, reward, clicked, impression, users, widget_ids) -> tuple[float, int, int]:
    """NDCG@5 per impression page, averaged per user, then across users.

    Within a page the model order is descending prediction with ties by
    ascending widget id. Pages with zero ideal DCG are skipped; users with no
    scored page count as skipped.
    """
    pred = np.asarray(pred, dtype=np.float64)
    re = np.where(np.asarray(clicked, dtype=bool), np.asarray(reward, dtype=np.float64), 0.0)
    pages: dict = defaultdict(list)
    owner = {}
    for i, imp in enumerate(np.asarray(impression)):
        pages[int(imp)].append(i)
        owner[int(imp)] = users[i]
    per_user: dict = defaultdict(list)
    all_users = []
    for imp in sorted(pages):
        rows = pages[imp]
        user = owner[imp]
        if user not in per_user:
            all_users.append(user)
            per_user[user]  # register user even if all pages skip
        order = sorted(rows, key=lambda r: (-pred[r], widget_ids[r]))
        val = ndcg_at_5([re[r] for r in order], [re[r] for r in rows])
        if val is not SKIP:
            per_user[user].append(val)
    scores = [float(np.mean(per_user[u])) for u in all_users if per_user[u]]
    skipped = sum(1 for u in all_users if not per_user[u])
    return (float(np.mean(scores)) if scores else float("nan")), len(scores), skipped


def evaluate_predictions(pred, reward, clicked, impression, users, widget_ids) -> MetricsReport:
    if len(reward) == 0:
        raise ValueError("empty evaluation log")
    ndcg, counted, skipped = ranking_metrics(pred, reward, clicked, impression, users, widget_ids)
    return MetricsReport(mse=mse_loss(pred, reward), mae=mae_loss(pred, reward), ndcg_at_5=ndcg,
                         n_users_counted=counted, n_users_skipped=skipped, n_rows=len(reward))


def evaluate_model(model, data) -> MetricsReport:
    """Metrics of ``model`` on a :class:`~bandit_rank.features.Dataset` built from an eval log."""
    if len(data) == 0:
        raise ValueError("empty evaluation log")
    pred = predict_dataset(model, data)
    wids = [data.store.widget_ids[w] for w in data.widget_rows]
    return evaluate_predictions(pred, data.reward, data.clicked, data.impression, data.customer_ids, wids)


def predict_dataset(model, data, batch_size: int = 4096) -> np.ndarray:
    out = [model.predict(data.batch(np.arange(s, min(s + batch_size, len(data)))))
           for s in range(0, len(data), batch_size)]
    return np.concatenate(out)


def select_best(val_ndcg: Sequence[float]) -> int:
    """Index of the best validation NDCG@5; the earliest wins ties."""
    if len(val_ndcg) == 0:
        raise ValueError("no snapshots to select from")
    best = 0
    for i, v in enumerate(val_ndcg):
        if v > val_ndcg[best]:
            best = i
    return best


UNDEFINED = None


def relative_report(candidate: MetricsReport, baseline: MetricsReport) -> dict:
    """Percentage change per metric relative to the baseline; ``None`` where undefined."""
    out = {}
    for key in ("mse", "mae", "ndcg_at_5"):
        b, c = getattr(baseline, key), getattr(candidate, key)
        out[key] = UNDEFINED if b == 0 or not np.isfinite(b) else 100.0 * (c - b) / b
    return out
