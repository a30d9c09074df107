"""Run configuration: nested dataclasses loaded from JSON, unknown keys rejected."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .embeddings import DEFAULT_HALF_LIFE, DEFAULT_TYPE_WEIGHTS
from .features import DEFAULT_CROSS_PAIRS, EVENT_DIM, HISTORY_LENGTH

ENV_OUT_DIR = "BANDIT_RANK_OUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class CatalogConfig:
    n_categories: int = 50
    n_products: int = 500
    n_brands: int = 20
    n_widgets: int = 40
    products_per_widget: int = 4
    n_groups: int = 3
    n_customers: int = 2000


@dataclass
class EmbeddingConfig:
    d_cat: int = 16
    d_item: int = 32
    half_life: float = DEFAULT_HALF_LIFE
    type_weights: dict = field(default_factory=lambda: dict(DEFAULT_TYPE_WEIGHTS))


@dataclass
class FeatureConfig:
    d_beta: int = 128
    length: int = 64
    hash_seed: int = 0
    cross_pairs: list = field(default_factory=lambda: [list(p) for p in DEFAULT_CROSS_PAIRS])
    history_length: int = HISTORY_LENGTH
    event_dim: int = EVENT_DIM


@dataclass
class ClickConfig:
    affinity: float = 4.0
    position_bias: list = field(default_factory=lambda: [1.0, 0.75, 0.55, 0.4, 0.3])
    base_logit: float = -1.5
    reward_mu: float = 1.0
    reward_sigma: float = 0.5
    attribution_window: float = 1800.0


@dataclass
class SimulationConfig:
    n_train: int = 50_000
    n_valid: int = 5_000
    n_test: int = 10_000


@dataclass
class ModelConfig:
    kind: str = "resnest"
    features: str = "personalized"
    epochs: int = 2
    batch_size: int = 512
    lr: float = 2e-3
    hyper: dict = field(default_factory=dict)


@dataclass
class ExplorationConfig:
    epsilon: float = 0.05
    thompson: bool = True  # linear bandit explores by Thompson sampling


@dataclass
class PathsConfig:
    out_dir: str = "runs"


@dataclass
class RunConfig:
    seed: int = 0
    catalog: CatalogConfig = field(default_factory=CatalogConfig)
    embeddings: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    click: ClickConfig = field(default_factory=ClickConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> "RunConfig":
        c, e, f = self.catalog, self.embeddings, self.features
        checks = [
            (c.n_categories >= 1, "catalog.n_categories must be >= 1"),
            (c.n_products >= 1, "catalog.n_products must be >= 1"),
            (c.n_brands >= 1, "catalog.n_brands must be >= 1"),
            (c.n_customers >= 1, "catalog.n_customers must be >= 1"),
            (c.n_groups >= 1, "catalog.n_groups must be >= 1"),
            (c.n_widgets >= 5, "catalog.n_widgets must be >= 5 (one page has 5 slots)"),
            (c.products_per_widget >= 1, "catalog.products_per_widget must be >= 1"),
            (e.d_cat >= 2 and e.d_item >= 2, "embedding dims must be >= 2"),
            (e.half_life > 0, "embeddings.half_life must be > 0"),
            (f.d_beta >= 16, "features.d_beta must be >= 16"),
            (f.length >= 1, "features.length must be >= 1"),
            (f.history_length >= 1 and f.event_dim >= 2, "features.history_length/event_dim too small"),
            (self.simulation.n_train >= 1, "simulation.n_train must be >= 1"),
            (self.simulation.n_valid >= 1 and self.simulation.n_test >= 1, "simulation splits must be >= 1"),
            (self.model.epochs >= 1 and self.model.batch_size >= 1, "model.epochs/batch_size must be >= 1"),
            (0.0 <= self.exploration.epsilon <= 1.0, "exploration.epsilon must lie in [0, 1]"),
            (len(self.click.position_bias) == 5, "click.position_bias needs 5 entries"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @property
    def out_dir(self) -> Path:
        return Path(os.environ.get(ENV_OUT_DIR, self.paths.out_dir))


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} in {where or 'top level'}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)


def smoke_config() -> RunConfig:
    """Smallest useful configuration; runs end to end in seconds."""
    return from_dict({
        "catalog": {"n_categories": 8, "n_products": 60, "n_brands": 5, "n_widgets": 15, "n_customers": 60},
        "embeddings": {"d_cat": 8, "d_item": 12},
        "features": {"d_beta": 32, "length": 8, "history_length": 10, "event_dim": 8},
        "simulation": {"n_train": 300, "n_valid": 100, "n_test": 100},
        "model": {"kind": "resnest", "epochs": 2, "batch_size": 64},
    })
