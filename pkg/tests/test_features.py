import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandit_rank.config import RunConfig
from bandit_rank.embeddings import (
    Catalog,
    ContentRepresentation,
    ContentWidget,
    CustomerRepresentation,
    EmbeddingTable,
    EngagementEvent,
    Product,
    UnknownIdError,
)
from bandit_rank.experiment import build_environment, build_store
from bandit_rank.features import (
    CategoricalFeature,
    ChannelProjection,
    FeatureStore,
    HashingEncoder,
    SchemaError,
    build_categorical_feature,
    build_channel_map,
    collision_report,
    hash_event,
    hash_token,
    vocabulary,
)
from bandit_rank.models import SplitAttentionBandit
from bandit_rank.nn import DimensionError, MSELoss, check_parameters

C = {"signed_in": True, "prime_member": False, "recent_event_counts": "10-19"}
X = {"region": "east", "page_type": "home", "widget_group_id": "g1"}
Z = {"widget_id": "w007", "widget_type": "deals"}


def test_empty_contexts_zero():
    assert not build_categorical_feature({}, {}, {}).beta.any()


def test_deterministic():
    a = build_categorical_feature(C, X, Z).beta
    b = build_categorical_feature(dict(C), dict(X), dict(Z)).beta
    np.testing.assert_array_equal(a, b)
    assert a.shape == (128,) and np.all(np.isfinite(a))


def test_three_unigrams_one_cross_norm_two():
    pairs = (("page_type", "widget_type"),)
    c, x, z = {}, {"page_type": "home", "region": "north"}, {"widget_type": "deals"}
    tokens = HashingEncoder(128, 0, pairs).tokens(c, x, z)
    assert len(tokens) == 4 and sum("^" in t for t in tokens) == 1
    # enumerate the four buckets; pick the first seed where they are distinct
    for seed in range(100):
        buckets = {hash_token(t, 128, seed)[0] for t in tokens}
        if len(buckets) == 4:
            break
    else:
        pytest.fail("no collision-free seed found")
    beta = build_categorical_feature(c, x, z, 128, seed, pairs).beta
    assert np.linalg.norm(beta) == pytest.approx(2.0, abs=1e-15)
    assert sorted(np.flatnonzero(beta)) == sorted(buckets)


def test_cross_pair_adds_nonlinear_token():
    with_cross = HashingEncoder(128, 0, (("page_type", "widget_type"),)).tokens({}, X, Z)
    without = HashingEncoder(128, 0, ()).tokens({}, X, Z)
    assert set(with_cross) - set(without) == {"page_type=home^widget_type=deals"}


def test_unregistered_key_named():
    with pytest.raises(SchemaError, match="favourite_colour"):
        build_categorical_feature({"favourite_colour": "red"}, {}, {})
    with pytest.raises(SchemaError, match="bogus"):
        HashingEncoder(128, 0, (("bogus", "region"),))


def test_small_d_beta_rejected():
    with pytest.raises(ValueError):
        HashingEncoder(8)


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(C.items())), st.permutations(list(X.items())), st.permutations(list(Z.items())))
def test_insertion_order_invariant(c, x, z):
    np.testing.assert_array_equal(build_categorical_feature(dict(c), dict(x), dict(z)).beta,
                                  build_categorical_feature(C, X, Z).beta)


def test_hash_token_range_and_sign():
    for tok in ("a=1", "b=2", "page_type=home^widget_type=deals"):
        bucket, sign = hash_token(tok, 37, 5)
        assert 0 <= bucket < 37 and sign in (-1.0, 1.0)
    assert hash_token("a=1", 128, 0) != hash_token("a=1", 128, 1) or hash_token("b=1", 128, 0) != hash_token(
        "b=1", 128, 1)


def test_collision_rate_at_default_width():
    cfg = RunConfig()
    env = build_environment(cfg)
    enc = build_store(cfg, env).encoder
    report = collision_report(vocabulary(enc, env.context_values()), 128, 0)
    print(f"collision report: {report}")
    assert report["n_tokens"] > 50
    assert report["pair_collision_rate"] < 0.05


def test_collision_report_brute_force():
    toks = [f"t={i}" for i in range(40)]
    rep = collision_report(toks, 16, 0)
    buckets = [hash_token(t, 16, 0)[0] for t in toks]
    pairs = sum(1 for a, b in itertools.combinations(buckets, 2) if a == b)
    assert rep["colliding_pairs"] == pairs
    assert rep["pair_collision_rate"] == pairs / (40 * 39 / 2)


def test_hash_event_shape():
    v = hash_event("click", "cat001", "b002", d=16)
    assert v.shape == (16,) and np.abs(v).sum() > 0


# --- channel map ------------------------------------------------------------

DIMS = {"beta": 32, "lambda": 8, "tau": 12, "gamma": 8}


def _sources(rng):
    return (CategoricalFeature(rng.standard_normal(32)),
            CustomerRepresentation(rng.standard_normal(8), rng.standard_normal(12)),
            ContentRepresentation(rng.standard_normal(8)))


def test_zero_inputs_zero_map(rng):
    proj = ChannelProjection(DIMS, 16, rng)
    fmap = build_channel_map(CategoricalFeature(np.zeros(32)),
                             CustomerRepresentation(np.zeros(8), np.zeros(12)),
                             ContentRepresentation(np.zeros(8)), proj, 16)
    assert fmap.data.shape == (4, 16) and not fmap.data.any()


def test_identity_projection_reproduces_source(rng):
    dims = {"beta": 8, "lambda": 8, "tau": 8, "gamma": 8}
    proj = ChannelProjection(dims, 8, rng)
    for w in proj.weights:
        w.value = np.eye(8)
    beta, rep, gamma = CategoricalFeature(rng.standard_normal(8)), \
        CustomerRepresentation(rng.standard_normal(8), rng.standard_normal(8)), \
        ContentRepresentation(rng.standard_normal(8))
    fmap = build_channel_map(beta, rep, gamma, proj, 8)
    np.testing.assert_array_equal(fmap.row("beta"), beta.beta)
    np.testing.assert_array_equal(fmap.row("lambda"), rep.lam)
    np.testing.assert_array_equal(fmap.row("tau"), rep.tau)
    np.testing.assert_array_equal(fmap.row("gamma"), gamma.gamma)


def test_channel_map_dimension_errors(rng):
    proj = ChannelProjection(DIMS, 16, rng)
    beta, rep, gamma = _sources(rng)
    with pytest.raises(DimensionError):
        build_channel_map(CategoricalFeature(np.zeros(31)), rep, gamma, proj)
    with pytest.raises(DimensionError):
        build_channel_map(beta, rep, gamma, proj, L=17)


@pytest.mark.parametrize("seed", range(10))
def test_channel_isolation_bit_exact(seed):
    rng = np.random.default_rng(seed)
    proj = ChannelProjection(DIMS, 16, rng)
    beta, rep, gamma = _sources(rng)
    base = build_channel_map(beta, rep, gamma, proj).data
    bumped = CustomerRepresentation(rep.lam + rng.standard_normal(8), rep.tau)
    moved = build_channel_map(beta, bumped, gamma, proj).data
    for i in (0, 2, 3):
        np.testing.assert_array_equal(moved[i], base[i])
    assert not np.array_equal(moved[1], base[1])


@pytest.mark.parametrize("seed", range(10))
def test_projection_gradients_through_ranker(seed, store):
    from conftest import smooth_batch

    rng = np.random.default_rng(seed)
    dims = {"beta": store.encoder.d_beta, "lambda": store.lam.shape[1], "tau": store.tau.shape[1],
            "gamma": store.gamma.shape[1]}
    model = SplitAttentionBandit(dims, length=6, width=4, seed=seed)
    batch = smooth_batch(model, store, 4, rng)
    target = rng.standard_normal(4)

    def loss(tape):
        return tape.apply(MSELoss(target), model.forward(tape, batch))

    assert check_parameters(loss, model.projection.parameters(), max_entries=40, rng=rng) <= 1e-4


def test_projection_input_gradients(rng):
    from bandit_rank.nn import GradientTape, grad_check

    proj = ChannelProjection({"a": 3, "b": 5}, 4, rng, input_grads=True)
    xb = rng.standard_normal((2, 5))
    w = rng.standard_normal((2, 2, 4))

    def f(xa):
        tape = GradientTape()
        na = tape.constant(xa.reshape(2, 3))
        out = tape.apply(proj, na, tape.constant(xb))
        tape.backward(out, seed=w)
        return float(np.sum(w * out.value)), na.grad

    assert grad_check(f, rng.standard_normal((2, 3))) <= 1e-4


# --- feature store ----------------------------------------------------------

def test_store_cold_start_and_unknown_widget(store):
    row = store.customer_row("never-seen")
    assert row == store.cold_start_row
    assert not store.lam[row].any() and not store.hist_mask[row].any()
    with pytest.raises(UnknownIdError, match="w999"):
        store.widget_row("w999")
    with pytest.raises(UnknownIdError, match="w999"):
        store.beta({}, {}, "w999")


def test_store_keeps_most_recent_history():
    cat = EmbeddingTable("category", ["c"], [[1.0, 0.0]])
    items = EmbeddingTable("item", [f"p{i}" for i in range(6)], np.eye(6) + 0.1)
    catalog = Catalog([Product(f"p{i}", "c", "b") for i in range(6)])
    events = [EngagementEvent("u", f"p{i}", "view", 100.0 + i) for i in range(6)]
    s = FeatureStore(catalog, (cat, items), [ContentWidget("w", "deals", ("p0",))], {"u": events[::-1]},
                     HashingEncoder(16), now=200.0, history_length=3, event_dim=8)
    row = s.customer_row("u")
    assert s.hist_mask[row].sum() == 3
    np.testing.assert_array_equal(s.hist_item[row], items.matrix[[3, 4, 5]])
