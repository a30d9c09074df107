"""End-to-end pipeline pieces shared by the CLI, the service and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .embeddings import build_synthetic_tables
from .evaluation import MetricsReport, evaluate_model, relative_report, select_best
from .eventlog import dataset_from_records
from .features import Dataset, FeatureStore, HashingEncoder
from .models import BASELINES, LinearBandit, Model, TrainResult, build_model, train
from .simulator import ClickModel, Environment, build_catalog, build_widgets, generate_population, run_episode_batch, uniform_policy

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def build_environment(cfg: RunConfig, seed: int | None = None) -> Environment:
    seed = cfg.seed if seed is None else seed
    c, e = cfg.catalog, cfg.embeddings
    catalog = build_catalog(c.n_categories, c.n_products, c.n_brands, seed)
    tables = build_synthetic_tables(c.n_categories, c.n_products, e.d_cat, e.d_item, seed)
    widgets = build_widgets(c.n_widgets, catalog, seed, c.products_per_widget, c.n_groups)
    customers = generate_population(c.n_customers, catalog, tables, seed)
    click = ClickModel(cfg.click.affinity, tuple(cfg.click.position_bias), cfg.click.base_logit,
                       cfg.click.reward_mu, cfg.click.reward_sigma, cfg.click.attribution_window)
    return Environment(catalog, tables, widgets, customers, click, n_groups=c.n_groups)


def build_store(cfg: RunConfig, env: Environment) -> FeatureStore:
    f = cfg.features
    encoder = HashingEncoder(f.d_beta, f.hash_seed, tuple(tuple(p) for p in f.cross_pairs))
    return FeatureStore(env.catalog, env.tables, env.widgets, env.histories, encoder, env.now,
                        cfg.embeddings.half_life, cfg.embeddings.type_weights, f.history_length, f.event_dim)


def feature_dims(cfg: RunConfig) -> dict[str, int]:
    return {
        "beta": cfg.features.d_beta,
        "lambda": cfg.embeddings.d_cat,
        "tau": cfg.embeddings.d_item,
        "gamma": cfg.embeddings.d_cat,
        "hist_item": cfg.embeddings.d_item,
        "hist_cat": cfg.features.event_dim,
    }


def make_model(cfg: RunConfig, kind: str | None = None, features: str | None = None,
               seed: int | None = None) -> Model:
    kind = kind or cfg.model.kind
    features = features or cfg.model.features
    seed = cfg.seed if seed is None else seed
    if kind == "linear":
        return LinearBandit(cfg.features.d_beta, **cfg.model.hyper.get("linear", {}))
    hyper = {"dims": feature_dims(cfg), "features": features, "seed": seed}
    if kind == "resnest":
        hyper["length"] = cfg.features.length
    hyper.update(cfg.model.hyper.get(kind, {}))
    return build_model(kind, hyper)


def simulate_logs(cfg: RunConfig, env: Environment, seed: int | None = None) -> dict[str, list[dict]]:
    """Uniform-random logging policy; impression ids are unique across splits."""
    seed = cfg.seed if seed is None else seed
    sizes = {"train": cfg.simulation.n_train, "valid": cfg.simulation.n_valid, "test": cfg.simulation.n_test}
    out, offset = {}, 0
    for i, split in enumerate(SPLITS):
        out[split] = run_episode_batch(uniform_policy, env, sizes[split], seed=seed * len(SPLITS) + i,
                                       first_impression=offset)
        offset += sizes[split]
    return out


@dataclass
class FitResult:
    model: Model
    best_epoch: int
    train: TrainResult
    val_reports: list[MetricsReport] = field(default_factory=list)


def fit(cfg: RunConfig, model: Model, train_ds: Dataset, valid_ds: Dataset | None = None,
        seed: int | None = None, epochs: int | None = None) -> FitResult:
    """Train, score every epoch on validation, and keep the best-NDCG@5 snapshot."""
    seed = cfg.seed if seed is None else seed
    reports: list[MetricsReport] = []

    def on_epoch(epoch, m):
        if valid_ds is None:
            return float("nan")
        rep = evaluate_model(m, valid_ds)
        reports.append(rep)
        log.info("epoch %d: valid ndcg@5=%.4f mse=%.4f", epoch, rep.ndcg_at_5, rep.mse)
        return rep.ndcg_at_5

    result = train(model, train_ds, epochs=epochs or cfg.model.epochs, lr=cfg.model.lr,
                   batch_size=cfg.model.batch_size, seed=seed, on_epoch=on_epoch, keep_snapshots=True)
    best = select_best(result.val_trace) if valid_ds is not None else len(result.snapshots) - 1
    return FitResult(result.snapshots[best], best, result, reports)


@dataclass
class SeedRun:
    seed: int
    reports: dict[str, MetricsReport]
    deltas: dict[str, dict]


def run_comparison(cfg: RunConfig, labels=("production", "resnest", "resnest_beta"), seeds=(0,),
                   baseline: str = "production") -> list[SeedRun]:
    """Simulate, train each labelled model and score it on the test split, per seed."""
    runs = []
    for seed in seeds:
        env = build_environment(cfg, seed)
        store = build_store(cfg, env)
        logs = simulate_logs(cfg, env, seed)
        data = {k: dataset_from_records(v, store) for k, v in logs.items()}
        reports = {}
        for label in labels:
            kind, feats = BASELINES[label]
            model = make_model(cfg, kind, feats, seed)
            fitted = fit(cfg, model, data["train"], data["valid"], seed)
            reports[label] = evaluate_model(fitted.model, data["test"])
            log.info("seed %d %s: %s", seed, label, reports[label])
        deltas = {k: relative_report(r, reports[baseline]) for k, r in reports.items()} if baseline in reports else {}
        runs.append(SeedRun(seed, reports, deltas))
    return runs


def summarize(runs: list[SeedRun], label: str, metric: str = "ndcg_at_5") -> tuple[float, float]:
    """Mean and sample std over seeds of a relative delta."""
    vals = np.array([r.deltas[label][metric] for r in runs], dtype=np.float64)
    return float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
