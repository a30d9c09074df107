import numpy as np
import pytest

from bandit_rank.embeddings import (
    DEFAULT_TYPE_WEIGHTS,
    Catalog,
    ContentWidget,
    EmbeddingTable,
    EngagementEvent,
    Product,
    UnknownIdError,
    aggregate_customer,
    assign_categories,
    build_synthetic_tables,
    content_representation,
    event_weights,
)

NOW = 1_000_000.0
HL = 1000.0


@pytest.fixture(scope="module")
def toy():
    """Three orthogonal categories, two products in c0 and one each in c1, c2."""
    cat = EmbeddingTable("category", ["c0", "c1", "c2"], np.eye(3))
    items = np.array([[1.0, 0, 0, 0], [0.6, 0.8, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]])
    item = EmbeddingTable("item", ["a", "b", "c", "d"], items)
    catalog = Catalog([Product("a", "c0", "x"), Product("b", "c0", "x"), Product("c", "c1", "y"),
                       Product("d", "c2", "y")])
    return catalog, (cat, item)


def ev(pid, kind="view", age=0.0, cid="u1"):
    return EngagementEvent(cid, pid, kind, NOW - age)


# --- synthetic tables --------------------------------------------------------

def test_tables_deterministic():
    a = build_synthetic_tables(10, 40, 8, 12, seed=3)
    b = build_synthetic_tables(10, 40, 8, 12, seed=3)
    for ta, tb in zip(a, b):
        assert ta.ids == tb.ids
        np.testing.assert_array_equal(ta.matrix, tb.matrix)


def test_category_vectors_unit():
    cat, item = build_synthetic_tables(20, 100, 8, 16, seed=0)
    np.testing.assert_allclose(np.linalg.norm(cat.matrix, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(item.matrix, axis=1), 1.0, atol=1e-9)
    assert cat.dim == 8 and item.dim == 16


def test_item_space_keeps_category_structure():
    n_cat, n_items = 20, 400
    cat, item = build_synthetic_tables(n_cat, n_items, 16, 32, seed=0)
    cats = assign_categories(n_items, n_cat, seed=0)
    rng = np.random.default_rng(0)
    within, across = [], []
    while len(within) < 1000 or len(across) < 1000:
        i, j = rng.integers(n_items, size=2)
        if i == j:
            continue
        c = float(item.matrix[i] @ item.matrix[j])
        (within if cats[i] == cats[j] else across).append(c)
    assert np.mean(within[:1000]) > np.mean(across[:1000])


@pytest.mark.parametrize("args", [(0, 5, 4, 4), (5, 0, 4, 4), (5, 5, 1, 4), (5, 5, 4, 1)])
def test_tables_argument_validation(args):
    with pytest.raises(ValueError):
        build_synthetic_tables(*args, seed=0)


def test_table_norm_invariant_and_unknown_lookup():
    with pytest.raises(ValueError):
        EmbeddingTable("category", ["a"], np.zeros((1, 3)))
    with pytest.raises(ValueError):
        EmbeddingTable("category", ["a"], np.full((1, 3), 10.0))
    t = EmbeddingTable("category", ["a"], np.ones((1, 3)))
    with pytest.raises(UnknownIdError, match="zzz"):
        t.lookup("zzz")
    with pytest.raises(ValueError):
        t.matrix[0, 0] = 5.0  # read-only


# --- customer aggregation ---------------------------------------------------

def test_empty_history_is_zero(toy):
    catalog, tables = toy
    rep = aggregate_customer([], catalog, tables, NOW, HL)
    np.testing.assert_array_equal(rep.lam, np.zeros(3))
    np.testing.assert_array_equal(rep.tau, np.zeros(4))


def test_single_event_is_category_vector(toy):
    catalog, tables = toy
    rep = aggregate_customer([ev("c")], catalog, tables, NOW, HL)
    np.testing.assert_array_equal(rep.lam, [0.0, 1.0, 0.0])
    assert np.linalg.norm(rep.lam) == 1.0


def test_decay_weights_two_thirds_one_third(toy):
    catalog, tables = toy
    events = [ev("a", age=0.0), ev("b", age=HL)]
    w = event_weights(events, NOW, HL)
    np.testing.assert_allclose(w, [1.0, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(w / w.sum(), [2 / 3, 1 / 3], atol=1e-15)
    rep = aggregate_customer(events, catalog, tables, NOW, HL)
    expected = 2 / 3 * tables[1].lookup("a") + 1 / 3 * tables[1].lookup("b")
    np.testing.assert_allclose(rep.tau, expected / np.linalg.norm(expected), atol=1e-15)
    np.testing.assert_allclose(rep.lam, [1.0, 0.0, 0.0], atol=1e-15)


def test_type_weights(toy):
    w = event_weights([ev("a", "view"), ev("a", "click"), ev("a", "purchase")], NOW, HL)
    np.testing.assert_array_equal(w, [1.0, 2.0, 4.0])


def test_unknown_product_named(toy):
    catalog, tables = toy
    with pytest.raises(UnknownIdError, match="p_missing"):
        aggregate_customer([ev("p_missing")], catalog, tables, NOW, HL)


def test_rejects_mixed_customers_and_bad_half_life(toy):
    catalog, tables = toy
    with pytest.raises(ValueError):
        aggregate_customer([ev("a", cid="u1"), ev("b", cid="u2")], catalog, tables, NOW, HL)
    with pytest.raises(ValueError):
        aggregate_customer([ev("a")], catalog, tables, NOW, 0.0)


def test_event_validation():
    with pytest.raises(ValueError):
        EngagementEvent("u", "a", "hover", 1.0)
    with pytest.raises(ValueError):
        EngagementEvent("u", "a", "view", 0.0)


def test_rescaled_type_weights_leave_representation_unchanged(toy):
    catalog, tables = toy
    events = [ev("a", "view", 10.0), ev("c", "purchase", 500.0), ev("d", "click", 2000.0)]
    base = aggregate_customer(events, catalog, tables, NOW, HL)
    scaled = aggregate_customer(events, catalog, tables, NOW, HL,
                                {k: 7.5 * v for k, v in DEFAULT_TYPE_WEIGHTS.items()})
    gamma = np.array([0.3, 0.5, 0.2])
    cos = lambda a, b: a @ b / np.linalg.norm(a) / np.linalg.norm(b)  # noqa: E731
    assert cos(base.lam, gamma) == pytest.approx(cos(scaled.lam, gamma), abs=1e-12)


def test_permutation_invariant(toy):
    catalog, tables = toy
    events = [ev("a", "view", 10.0), ev("c", "purchase", 500.0), ev("d", "click", 2000.0), ev("b", "view", 7.0)]
    base = aggregate_customer(events, catalog, tables, NOW, HL)
    for perm in np.random.default_rng(0).permuted(np.tile(np.arange(4), (5, 1)), axis=1):
        rep = aggregate_customer([events[i] for i in perm], catalog, tables, NOW, HL)
        np.testing.assert_allclose(rep.lam, base.lam, atol=1e-15)
        np.testing.assert_allclose(rep.tau, base.tau, atol=1e-15)


def test_single_event_age_does_not_matter(toy):
    catalog, tables = toy
    young = aggregate_customer([ev("b", age=1.0)], catalog, tables, NOW, HL)
    old = aggregate_customer([ev("b", age=50 * HL)], catalog, tables, NOW, HL)
    np.testing.assert_array_equal(young.lam, old.lam)
    np.testing.assert_array_equal(young.tau, old.tau)


@pytest.mark.parametrize("ages", [(0.0, 1.0), (100.0, 3000.0), (5.0, 5.0 + HL)])
def test_newer_event_dominates(toy, ages):
    catalog, tables = toy
    new_age, old_age = ages
    rep = aggregate_customer([ev("c", age=new_age), ev("d", age=old_age)], catalog, tables, NOW, HL)
    assert rep.lam @ tables[0].lookup("c1") >= rep.lam @ tables[0].lookup("c2")


# --- content representation -------------------------------------------------

def test_gamma_single_product(toy):
    catalog, tables = toy
    g = content_representation(ContentWidget("w", "deals", ("c",)), catalog, tables[0]).gamma
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_gamma_buy_again_four_same_category():
    cat = EmbeddingTable("category", ["k"], [[0.6, 0.8]])
    catalog = Catalog([Product(f"p{i}", "k", "b") for i in range(4)])
    w = ContentWidget("buy_again", "buy_again", tuple(f"p{i}" for i in range(4)))
    np.testing.assert_allclose(content_representation(w, catalog, cat).gamma, [0.6, 0.8], atol=1e-15)


def test_gamma_orthogonal_pair(toy):
    catalog, tables = toy
    g = content_representation(ContentWidget("w", "deals", ("a", "c")), catalog, tables[0]).gamma
    np.testing.assert_allclose(g, np.array([1.0, 1.0, 0.0]) / np.sqrt(2), atol=1e-15)


def test_gamma_in_lambda_space(toy):
    catalog, tables = toy
    rep = aggregate_customer([ev("a"), ev("d")], catalog, tables, NOW, HL)
    g = content_representation(ContentWidget("w", "deals", ("b", "c")), catalog, tables[0]).gamma
    assert g.shape == rep.lam.shape
    assert np.isfinite(rep.lam @ g)


def test_gamma_unknown_product(toy):
    catalog, tables = toy
    with pytest.raises(UnknownIdError, match="nope"):
        content_representation(ContentWidget("w", "deals", ("nope",)), catalog, tables[0])


def test_widget_needs_products():
    with pytest.raises(ValueError):
        ContentWidget("w", "deals", ())
