"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict shown in the
``acceptance criteria`` section of the pytest summary.
"""
import itertools
import json
import struct
import threading
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from conftest import random_batch, smooth_batch

from bandit_rank.checkpoint import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    CheckpointVersionError,
    decode_checkpoint,
    encode_checkpoint,
)
from bandit_rank.cli import main
from bandit_rank.config import ENV_OUT_DIR, RunConfig
from bandit_rank.evaluation import dcg_at_5, ndcg_at_5
from bandit_rank.experiment import make_model, run_comparison
from bandit_rank.features import CategoricalFeature, ChannelProjection, build_channel_map
from bandit_rank.embeddings import ContentRepresentation, CustomerRepresentation
from bandit_rank.models import (
    DeepInterestBandit,
    FeedForwardBandit,
    LinearBanditState,
    SplitAttention,
    SplitAttentionBandit,
    linear_posterior_update,
)
from bandit_rank.nn import MSELoss, check_parameters
from bandit_rank.service import RankService, Snapshot, make_server

SEEDS = range(10)


def _loss(model, batch, target):
    return lambda tape: tape.apply(MSELoss(target), model.forward(tape, batch))


def test_criterion_1_gradient_correctness(criterion, store, dims):
    start = time.perf_counter()
    worst = {}
    builders = {
        "ffn": lambda s: FeedForwardBandit(dims, "personalized", hidden=(16, 8), seed=s),
        "din": lambda s: DeepInterestBandit(dims, "personalized", att_hidden=6, hidden=(8,), seed=s),
        "din_categorical": lambda s: DeepInterestBandit(dims, "categorical", att_hidden=6, hidden=(8,), seed=s),
        "split_attention": lambda s: SplitAttentionBandit(dims, length=6, width=4, blocks=2, bottleneck=3,
                                                         head_hidden=5, seed=s),
    }
    for name, build in builders.items():
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            model = build(seed)
            batch = smooth_batch(model, store, 4, rng)
            params = model.parameters()
            if name == "split_attention":
                worst["projection"] = max(worst.get("projection", 0.0), check_parameters(
                    _loss(model, batch, rng.standard_normal(4)), model.projection.parameters(), eps=1e-5,
                    max_entries=20, rng=rng))
                params = [p for p in params if p not in model.projection.parameters()]
            err = check_parameters(_loss(model, batch, rng.standard_normal(4)), params, eps=1e-5,
                                   max_entries=20, rng=rng)
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(1, ok, f"max rel err over {len(SEEDS)} seeds: {detail} (<= 1e-4); {elapsed:.1f}s")


def test_criterion_2_linear_posterior_matches_ridge(criterion):
    start = time.perf_counter()
    errs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        d, n, noise_var, alpha = 8, 200, 0.5, 1.0
        X = rng.standard_normal((n, d))
        y = X @ rng.standard_normal(d) + rng.standard_normal(n)
        state = LinearBanditState.prior(d, noise_var, alpha)
        for x, r in zip(X, y):
            state = linear_posterior_update(state, x, r)
        ridge = np.linalg.solve(X.T @ X / noise_var + alpha * np.eye(d), X.T @ y / noise_var)
        errs.append(np.max(np.abs(state.mu - ridge)))
    elapsed = time.perf_counter() - start
    criterion(2, max(errs) <= 1e-8 and elapsed < 10,
              f"max |mu - ridge| over 5 seeds {max(errs):.1e} (<= 1e-8); {elapsed:.2f}s")


def test_criterion_3_ndcg_oracle(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    violations, checked = 0, 0
    for n in range(1, 6):
        for _ in range(100):
            re = list(np.where(rng.random(n) < 0.4, 0.0, rng.integers(1, 4, n).astype(float)))
            if not any(re):
                continue
            best = ndcg_at_5(sorted(re, reverse=True), re)
            for perm in itertools.permutations(re):
                checked += 1
                violations += ndcg_at_5(list(perm), re) > best + 1e-15
    hand = dcg_at_5([3, 2, 1, 0, 0])
    elapsed = time.perf_counter() - start
    ok = violations == 0 and abs(hand - 4.76186) <= 1e-4 and elapsed < 10
    criterion(3, ok, f"{checked} permutations, {violations} beat descending order; "
                     f"DCG[3,2,1,0,0]={hand:.5f}; {elapsed:.1f}s")


@pytest.fixture(scope="module")
def comparison():
    start = time.perf_counter()
    runs = run_comparison(RunConfig().validate(), labels=("production", "resnest", "resnest_beta"),
                          seeds=range(5))
    return runs, time.perf_counter() - start


def test_criterion_4_directional_ndcg_lift(criterion, comparison):
    runs, elapsed = comparison
    lifts = np.array([r.deltas["resnest"]["ndcg_at_5"] for r in runs])
    mean, std = lifts.mean(), lifts.std(ddof=1)
    print("per-seed NDCG@5 lift (%):", np.round(lifts, 2))
    ok = mean >= 5.0 and mean - std > 0 and elapsed < 600
    criterion(4, ok, f"split-attention vs linear NDCG@5 lift {mean:+.2f}% +- {std:.2f} over 5 seeds "
                     f"(need >= +5%, mean-std > 0); {elapsed:.0f}s")


def test_criterion_5_feature_ablation(criterion, comparison):
    runs, _ = comparison
    full = np.mean([r.reports["resnest"].ndcg_at_5 for r in runs])
    beta_only = np.mean([r.reports["resnest_beta"].ndcg_at_5 for r in runs])
    criterion(5, beta_only < full, f"mean NDCG@5 beta only {beta_only:.4f} vs personalized {full:.4f}")


def test_criterion_6_split_attention_invariants(criterion, rng):
    worst_sum = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        blk = SplitAttention(4, 6, r, radix=1 + seed % 4, cardinality=2 if seed % 2 else 1)
        blk.c2.value = 3 * r.standard_normal(blk.c2.value.shape)
        a = blk.attention_weights(r.standard_normal((3, 5, 4)))
        worst_sum = max(worst_sum, float(np.max(np.abs(a.sum(axis=1) - 1.0))))

    blk = SplitAttention(4, 4, rng, radix=1)
    blk.b.value = rng.standard_normal(4)
    x = rng.standard_normal((3, 5, 4))
    radix_one = np.array_equal(blk.forward(x)[0], x + np.maximum(x @ blk.w.value + blk.b.value, 0.0))

    dims = {"beta": 32, "lambda": 8, "tau": 12, "gamma": 8}
    isolated = True
    for seed in range(10):
        r = np.random.default_rng(seed)
        proj = ChannelProjection(dims, 16, r)
        beta = CategoricalFeature(r.standard_normal(32))
        rep = CustomerRepresentation(r.standard_normal(8), r.standard_normal(12))
        gamma = ContentRepresentation(r.standard_normal(8))
        base = build_channel_map(beta, rep, gamma, proj).data
        moved = build_channel_map(beta, CustomerRepresentation(rep.lam + 1.0, rep.tau), gamma, proj).data
        isolated &= all(np.array_equal(moved[i], base[i]) for i in (0, 2, 3))
    ok = worst_sum <= 1e-9 and radix_one and isolated
    criterion(6, ok, f"max |sum(a)-1| {worst_sum:.1e}; radix 1 exact: {radix_one}; channel isolation: {isolated}")


def test_criterion_7_reproducibility(criterion, tmp_path, monkeypatch, cfg):
    config = tmp_path / "cfg.json"
    config.write_text(cfg.to_json())
    common = ["--config", str(config), "--seed", "3"]
    for run in ("a", "b"):
        monkeypatch.setenv(ENV_OUT_DIR, str(tmp_path / run))
        assert main(["simulate", *common]) == 0
        assert main(["train", *common, "--model", "resnest"]) == 0
        assert main(["evaluate", str(tmp_path / run / "checkpoints" / "resnest.brnk"), *common]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.suffix in (".jsonl", ".brnk", ".json"))
    differing = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    ok = len(files) == 5 and not differing
    criterion(7, ok, f"{len(files)} logs/checkpoints/reports compared, {len(differing)} differ {differing}")


def test_criterion_8_checkpoint_round_trip(criterion, cfg, store, datasets):
    mismatched = []
    for kind in ("linear", "ffn", "din", "resnest"):
        model = make_model(cfg, kind)
        if kind == "linear":
            model.fit(datasets["train"])
        loaded, _ = decode_checkpoint(encode_checkpoint(model, cfg.to_dict(), cfg.hash()))
        batch = random_batch(store, 100, np.random.default_rng(0))
        if not np.array_equal(loaded.predict(batch), model.narrowed().predict(batch)):
            mismatched.append(kind)

    blob = encode_checkpoint(make_model(cfg, "ffn"))
    flipped = bytearray(blob)
    flipped[-10] ^= 0x40
    cases = [
        (bytes(flipped), CheckpointCorruptionError),
        (blob[:-9], CheckpointFormatError),
        (b"NOPE" + blob[4:], CheckpointFormatError),
        (blob[:4] + struct.pack("<I", 7) + blob[8:], CheckpointVersionError),
    ]
    rejected = 0
    for bad, err in cases:
        try:
            decode_checkpoint(bad)
        except err:
            rejected += 1
        except Exception:
            pass
    ok = not mismatched and rejected == len(cases)
    criterion(8, ok, f"bit-identical predictions on 100 inputs for 4 model kinds (mismatch: {mismatched}); "
                     f"{rejected}/{len(cases)} corrupted containers rejected with the documented class")


def test_criterion_9_service_concurrency(criterion, cfg, store, env):
    service = RankService(Snapshot(make_model(cfg, "resnest"), store, "acceptance"))
    server = make_server(service, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}/rank"

    def body(i):
        c = env.customers[i % 10]
        return {"customer_id": c.customer_id, "customer_context": c.context(),
                "shopping_context": {"region": c.region, "page_type": "home", "widget_group_id": "g0"},
                "candidates": sorted(env.gammas)[:8], "k": 5, "exploration": {"epsilon": 0.0}}

    def post(i):
        req = urllib.request.Request(url, json.dumps(body(i)).encode(), {"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=60) as resp:
            return resp.status, json.loads(resp.read())

    try:
        expected = [json.loads(json.dumps(service.rank(body(i)))) for i in range(50)]
        with ThreadPoolExecutor(max_workers=50) as pool:
            got = list(pool.map(post, range(50)))
    finally:
        server.shutdown()
        server.server_close()
    statuses_ok = all(s == 200 for s, _ in got)
    ordered = all(len(p["ranked"]) == 5 and [e["score"] for e in p["ranked"]]
                  == sorted((e["score"] for e in p["ranked"]), reverse=True) for _, p in got)
    identical = [p for _, p in got] == expected
    criterion(9, statuses_ok and ordered and identical,
              f"50 concurrent POST /rank: all 200 {statuses_ok}, K=5 ordered {ordered}, "
              f"match serial responses {identical}")
