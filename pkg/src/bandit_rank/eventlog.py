"""JSON Lines event logs: one record per shown (impression, slot).

An optional first line ``{"type": "header", ...}`` carries the effective run
configuration. Every other line is a slot record; see ``FORMATS.md``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import Dataset, FeatureStore
from .models.ranking import RankedEntry, RankedList, RankingRequest
from .simulator import RewardRecord

SLOT_FIELDS = {
    "impression_id": int,
    "customer_id": str,
    "customer_context": dict,
    "shopping_context": dict,
    "candidates": list,
    "k": int,
    "slot": int,
    "widget_id": str,
    "score": (int, float),
    "explored": bool,
    "clicked": bool,
    "reward": (int, float),
    "attribution_window": (int, float),
}


class LogParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LogSchemaError(LogParseError):
    def __init__(self, message: str, line: int, field: str):
        super().__init__(f"field {field!r}: {message}", line)
        self.field = field


@dataclass(frozen=True)
class LogRecord:
    request: RankingRequest
    ranked: RankedList
    reward: RewardRecord
    line: int = 0


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_event_log(path, records: Iterable[dict], header: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(_dumps({"type": "header", **header}) + "\n")
        for rec in records:
            fh.write(_dumps({"type": "slot", **rec}) + "\n")


def validate_record(obj: dict, line: int) -> dict:
    for name, typ in SLOT_FIELDS.items():
        if name not in obj:
            raise LogSchemaError("missing", line, name)
        value = obj[name]
        if typ in ((int, float),) and isinstance(value, bool):
            raise LogSchemaError("expected a number", line, name)
        if typ is int and isinstance(value, bool):
            raise LogSchemaError("expected an integer", line, name)
        if not isinstance(value, typ):
            raise LogSchemaError(f"expected {getattr(typ, '__name__', 'number')}, got {type(value).__name__}",
                                 line, name)
    if not 1 <= obj["slot"] <= 5:
        raise LogSchemaError("slot must be in 1..5", line, "slot")
    r = float(obj["reward"])
    if not np.isfinite(r) or r < 0:
        raise LogSchemaError("reward must be finite and non-negative", line, "reward")
    if r > 0 and not obj["clicked"]:
        raise LogSchemaError("positive reward without a click", line, "reward")
    return obj


def read_event_log(path) -> tuple[dict | None, list[dict]]:
    """Raw header and validated slot records, with line numbers attached as ``_line``."""
    header, out = None, []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise LogParseError(f"malformed JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise LogParseError("expected a JSON object", lineno)
            if obj.get("type") == "header":
                if out or header is not None:
                    raise LogParseError("header must be the first line", lineno)
                header = obj
                continue
            rec = validate_record(obj, lineno)
            rec.pop("type", None)
            rec["_line"] = lineno
            out.append(rec)
    return header, out


def to_log_records(raw: Sequence[dict]) -> list[LogRecord]:
    """Group slot records by impression into (request, ranked list, reward) triples."""
    out = []
    by_imp: dict[int, list[dict]] = {}
    for rec in raw:
        by_imp.setdefault(rec["impression_id"], []).append(rec)
    for imp, recs in by_imp.items():
        recs = sorted(recs, key=lambda r: r["slot"])
        first = recs[0]
        request = RankingRequest(first["customer_id"], first["customer_context"], first["shopping_context"],
                                 tuple(first["candidates"]), first["k"])
        ranked = RankedList([RankedEntry(r["widget_id"], float(r["score"]), r["explored"]) for r in recs])
        for r in recs:
            reward = RewardRecord(imp, r["customer_id"], r["widget_id"], r["slot"], r["clicked"],
                                  float(r["reward"]), float(r["attribution_window"]))
            out.append(LogRecord(request, ranked, reward, r.get("_line", 0)))
    return out


def parse_event_log(path) -> list[LogRecord]:
    return to_log_records(read_event_log(path)[1])


def dataset_from_records(records: Sequence[dict], store: FeatureStore) -> Dataset:
    """Feature rows for raw slot records (as produced by the simulator or :func:`read_event_log`)."""
    n = len(records)
    beta = np.zeros((n, store.encoder.d_beta), dtype=np.float32)
    cust = np.zeros(n, dtype=np.int64)
    wid = np.zeros(n, dtype=np.int64)
    reward = np.zeros(n)
    clicked = np.zeros(n, dtype=bool)
    impression = np.zeros(n, dtype=np.int64)
    slot = np.zeros(n, dtype=np.int64)
    users = []
    for i, r in enumerate(records):
        beta[i] = store.beta(r["customer_context"], r["shopping_context"], r["widget_id"])
        cust[i] = store.customer_row(r["customer_id"])
        wid[i] = store.widget_row(r["widget_id"])
        reward[i] = r["reward"]
        clicked[i] = r["clicked"]
        impression[i] = r["impression_id"]
        slot[i] = r["slot"]
        users.append(r["customer_id"])
    if not np.all(np.isfinite(reward)):
        raise ValueError("non-finite reward in log")
    return Dataset(store, cust, wid, beta, reward, clicked, impression, slot, users)
