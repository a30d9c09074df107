import numpy as np
import pytest

from bandit_rank.config import smoke_config
from bandit_rank.eventlog import dataset_from_records
from bandit_rank.experiment import build_environment, build_store, feature_dims, simulate_logs


@pytest.fixture(scope="session")
def cfg():
    return smoke_config()


@pytest.fixture(scope="session")
def env(cfg):
    return build_environment(cfg)


@pytest.fixture(scope="session")
def store(cfg, env):
    return build_store(cfg, env)


@pytest.fixture(scope="session")
def dims(cfg):
    return feature_dims(cfg)


@pytest.fixture(scope="session")
def logs(cfg, env):
    return simulate_logs(cfg, env)


@pytest.fixture(scope="session")
def datasets(logs, store):
    return {k: dataset_from_records(v, store) for k, v in logs.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_batch(store, n, rng):
    """Feature batch over random customers/widgets with random beta vectors."""
    cust = rng.integers(len(store.customer_ids) + 1, size=n)
    wid = rng.integers(len(store.widget_ids), size=n)
    beta = rng.standard_normal((n, store.encoder.d_beta))
    return store.batch(cust, wid, beta)


def relu_margin(model, batch) -> float:
    """Smallest |pre-activation| over every ReLU evaluated by ``model`` on ``batch``.

    Central differences are only valid where the function is smooth; a grad
    check point within ``eps`` of a ReLU kink measures the kink, not the
    gradient.
    """
    from bandit_rank.models import AttentionPooling, SplitAttention
    from bandit_rank.nn import GradientTape, ReLU

    tape = GradientTape()
    model.forward(tape, batch)
    out = np.inf
    for layer, inputs, _, cache in tape.ops:
        if isinstance(layer, ReLU):
            vals = [inputs[0].value]
        elif isinstance(layer, SplitAttention):
            vals = [cache[1], cache[4]]
        elif isinstance(layer, AttentionPooling):
            _, mask, _, (_, pre, _, _) = cache
            vals = [pre[mask]]
        else:
            continue
        out = min([out] + [float(np.abs(v).min()) for v in vals if v.size])
    return out


def smooth_batch(model, store, n, rng, margin=1e-3, tries=100):
    """A random batch whose ReLU pre-activations all sit at least ``margin`` from zero."""
    for _ in range(tries):
        batch = random_batch(store, n, rng)
        if relu_margin(model, batch) >= margin:
            return batch
    raise RuntimeError("could not draw a batch away from ReLU kinks")


# --- acceptance reporting ---------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 9


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line, then asserts ``ok``."""
    def record(n: int, ok: bool, detail: str):
        ACCEPTANCE[n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {n}: NOT RUN  (deselected, or errored before reporting)")
            continue
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
