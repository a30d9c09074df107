"""Ranker zoo: linear Thompson baseline, feed-forward, DIN-style and split-attention bandits."""
from .base import Model, TrainingError, TrainResult, train
from .din import AttentionPooling, DeepInterestBandit, masked_softmax
from .ffn import FeedForwardBandit
from .linear import (
    LinearBandit,
    LinearBanditState,
    linear_posterior_update,
    linear_posterior_update_batch,
    sample_weights,
    thompson_score,
)
from .ranking import RankedEntry, RankedList, RankingRequest, rank_candidates, select_top_k
from .resnest import SplitAttention, SplitAttentionBandit

MODEL_KINDS = {
    "linear": LinearBandit,
    "ffn": FeedForwardBandit,
    "din": DeepInterestBandit,
    "resnest": SplitAttentionBandit,
}

# Table-1 rows: label -> (kind, feature set)
BASELINES = {
    "production": ("linear", "categorical"),
    "nn_a": ("ffn", "categorical"),
    "din_a": ("din", "categorical"),
    "nn_b": ("ffn", "personalized"),
    "din_b": ("din", "personalized"),
    "resnest": ("resnest", "personalized"),
    "resnest_beta": ("resnest", "categorical"),
}


def build_model(kind: str, hyper: dict) -> Model:
    """Instantiate a model from its kind and the ``hyper`` dict it reports."""
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(**hyper)


__all__ = [
    "AttentionPooling", "BASELINES", "DeepInterestBandit", "FeedForwardBandit", "LinearBandit",
    "LinearBanditState", "MODEL_KINDS", "Model", "RankedEntry", "RankedList", "RankingRequest",
    "SplitAttention", "SplitAttentionBandit", "TrainResult", "TrainingError", "build_model",
    "linear_posterior_update", "linear_posterior_update_batch", "masked_softmax", "rank_candidates",
    "sample_weights", "select_top_k", "thompson_score", "train",
]
