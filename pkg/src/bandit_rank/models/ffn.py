from __future__ import annotations

import numpy as np

from ..features import FeatureBatch
from ..nn import MLP, Concat, GradientTape, Node, Squeeze
from .base import Model

FEATURE_SETS = {
    "categorical": ("beta",),
    "personalized": ("beta", "lambda", "tau", "gamma"),
}


class FeedForwardBandit(Model):
    """Plain MLP on the concatenated inputs: ``input -> 128 -> 64 -> 1`` with ReLU."""

    kind = "ffn"

    def __init__(self, dims: dict[str, int], features: str = "categorical", hidden=(128, 64), seed: int = 0):
        super().__init__(dict(dims=dict(dims), features=features, hidden=list(hidden), seed=seed))
        self.inputs = FEATURE_SETS[features]
        rng = np.random.default_rng(seed)
        n_in = sum(dims[name] for name in self.inputs)
        self.mlp = MLP([n_in, *hidden, 1], rng, name="ffn")
        self._concat = Concat()
        self._squeeze = Squeeze()

    def parameters(self):
        return self.mlp.parameters()

    def forward(self, tape: GradientTape, batch: FeatureBatch) -> Node:
        xs = [tape.constant(batch.channel(name)) for name in self.inputs]
        x = xs[0] if len(xs) == 1 else tape.apply(self._concat, *xs)
        return tape.apply(self._squeeze, self.mlp(tape, x))
