"""HTTP ranking endpoint over an immutable, atomically swappable model snapshot.

``POST /rank`` scores candidates, ``GET /health`` reports the serving
snapshot, ``POST /reload`` swaps in a checkpoint. Request handling never
mutates the snapshot; a reload replaces the reference in one assignment, so
each request sees either the old snapshot or the new one.
"""
from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .checkpoint import decode_checkpoint
from .config import RunConfig, from_dict
from .embeddings import UnknownIdError
from .features import FeatureStore, SchemaError
from .models import LinearBandit, Model, RankingRequest, rank_candidates

log = logging.getLogger(__name__)


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class Snapshot:
    model: Model
    store: FeatureStore
    version: str
    epsilon: float = 0.0
    thompson: bool = False


def snapshot_from_checkpoint(path, cfg: RunConfig | None = None) -> Snapshot:
    """Load a checkpoint and rebuild the feature store from the config it carries."""
    from .experiment import build_environment, build_store

    blob = Path(path).read_bytes()
    model, header = decode_checkpoint(blob)
    if cfg is None:
        cfg = from_dict(header["config"]) if header.get("config") else RunConfig()
    store = build_store(cfg, build_environment(cfg))
    version = hashlib.sha256(blob).hexdigest()[:12]
    thompson = isinstance(model, LinearBandit) and cfg.exploration.thompson
    return Snapshot(model, store, version, cfg.exploration.epsilon, thompson)


class RankService:
    def __init__(self, snapshot: Snapshot | None = None):
        self._snapshot = snapshot
        self._reload_lock = threading.Lock()

    @property
    def snapshot(self) -> Snapshot | None:
        return self._snapshot

    def swap(self, snapshot: Snapshot):
        with self._reload_lock:
            self._snapshot = snapshot

    def health(self) -> dict:
        snap = self._snapshot
        return {"status": "ok" if snap else "no_snapshot", "snapshot": snap.version if snap else None}

    def rank(self, body) -> dict:
        snap = self._snapshot  # one read; the rest of the request uses this snapshot
        if snap is None:
            raise ServiceError(503, "no model snapshot loaded")
        request, exploration, rng = self._parse(body, snap)
        for wid in request.candidates:
            if wid not in snap.store.widgets:
                raise ServiceError(404, f"unknown widget id {wid!r}")
        try:
            ranked = rank_candidates(snap.model, snap.store, request, exploration, rng)
        except SchemaError as exc:
            raise ServiceError(400, str(exc)) from None
        if ranked.excluded:
            reasons = "; ".join(f"{w}: {why}" for w, why in ranked.excluded)
            status = 400 if all("context key" in why for _, why in ranked.excluded) else 422
            raise ServiceError(status, f"could not build features: {reasons}")
        return {
            "snapshot": snap.version,
            "ranked": [{"widget_id": e.widget_id, "score": e.score, "explored": e.explored} for e in ranked.entries],
        }

    def _parse(self, body, snap: Snapshot):
        if not isinstance(body, dict):
            raise ServiceError(400, "request body must be a JSON object")
        for key in ("customer_id", "candidates", "k"):
            if key not in body:
                raise ServiceError(400, f"missing field {key!r}")
        candidates = body["candidates"]
        if not isinstance(candidates, list) or not candidates:
            raise ServiceError(400, "candidates must be a non-empty list")
        k = body["k"]
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise ServiceError(400, "k must be a positive integer")
        c = body.get("customer_context", {})
        x = body.get("shopping_context", {})
        if not isinstance(c, dict) or not isinstance(x, dict):
            raise ServiceError(400, "contexts must be JSON objects")
        request = RankingRequest(str(body["customer_id"]), c, x, tuple(str(w) for w in candidates), k)

        exploration = body.get("exploration")
        if exploration is None:
            exploration = {"thompson": True} if snap.thompson else {"epsilon": snap.epsilon}
        if not isinstance(exploration, dict):
            raise ServiceError(400, "exploration must be an object")
        if exploration.get("thompson") and not isinstance(snap.model, LinearBandit):
            raise ServiceError(400, "thompson exploration needs a linear-bandit snapshot")
        eps = exploration.get("epsilon", 0.0)
        if not isinstance(eps, (int, float)) or not 0.0 <= eps <= 1.0:
            raise ServiceError(400, "epsilon must be a number in [0, 1]")
        seed = body.get("seed")
        rng = np.random.default_rng(seed) if seed is not None else np.random.default_rng()
        return request, exploration, rng


def _handler(service: RankService, reload_fn=None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s - " + fmt, self.address_string(), *args)

        def _send(self, status: int, payload: dict):
            data = json.dumps(payload, sort_keys=True).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _body(self):
            n = int(self.headers.get("Content-Length", 0))
            try:
                return json.loads(self.rfile.read(n) or b"null")
            except json.JSONDecodeError as exc:
                raise ServiceError(400, f"invalid JSON body: {exc.msg}") from None

        def do_GET(self):
            if self.path == "/health":
                self._send(200, service.health())
            else:
                self._send(404, {"error": f"no route {self.path}"})

        def do_POST(self):
            try:
                if self.path == "/rank":
                    self._send(200, service.rank(self._body()))
                elif self.path == "/reload":
                    if reload_fn is None:
                        raise ServiceError(501, "reload is not configured")
                    body = self._body() or {}
                    service.swap(reload_fn(body.get("checkpoint")))
                    self._send(200, service.health())
                else:
                    self._send(404, {"error": f"no route {self.path}"})
            except ServiceError as exc:
                self._send(exc.status, {"error": str(exc)})
            except UnknownIdError as exc:
                self._send(404, {"error": str(exc)})
            except Exception as exc:  # keep the server alive; report the failure
                log.exception("request failed")
                self._send(500, {"error": f"{type(exc).__name__}: {exc}"})

    return Handler


class _Server(ThreadingHTTPServer):
    # the socketserver default backlog of 5 resets connections under bursts
    request_queue_size = 128


def make_server(service: RankService, host: str = "127.0.0.1", port: int = 8080, reload_fn=None):
    server = _Server((host, port), _handler(service, reload_fn))
    server.daemon_threads = True
    return server
