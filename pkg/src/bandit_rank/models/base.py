from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..features import Dataset, FeatureBatch
from ..nn import Adam, GradientTape, MSELoss, Node, Parameter


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


class Model:
    """Common surface of every ranker.

    ``kind`` plus ``hyper`` fully determine the architecture, so a checkpoint
    only needs those and the parameter values in :meth:`parameters` order.
    """

    kind: str = ""
    trainable = True

    def __init__(self, hyper: dict):
        self.hyper = dict(hyper)

    def parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def forward(self, tape: GradientTape, batch: FeatureBatch) -> Node:
        raise NotImplementedError

    def predict(self, batch: FeatureBatch) -> np.ndarray:
        return self.forward(GradientTape(record=False), batch).value

    def loss(self, tape: GradientTape, batch: FeatureBatch, target) -> Node:
        return tape.apply(MSELoss(target), self.forward(tape, batch))

    def state(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]

    def load_state(self, values):
        params = self.parameters()
        if len(values) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(values)}")
        for p, v in zip(params, values):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.value.shape:
                raise ValueError(f"{p.name}: shape {v.shape} vs {p.value.shape}")
            p.value = v.copy()

    def snapshot(self) -> "Model":
        """An independent copy; later training never leaks into it."""
        return copy.deepcopy(self)

    def narrowed(self) -> "Model":
        """Copy with every parameter rounded through float32, as stored in checkpoints."""
        m = self.snapshot()
        for p in m.parameters():
            p.value = p.value.astype(np.float32).astype(np.float64)
        return m


@dataclass
class TrainResult:
    loss_trace: list[float] = field(default_factory=list)
    val_trace: list[float] = field(default_factory=list)
    snapshots: list = field(default_factory=list)


def train(model: Model, data: Dataset, epochs: int = 3, lr: float = 1e-3, batch_size: int = 256,
          seed: int = 0, on_epoch: Callable[[int, Model], float] | None = None,
          keep_snapshots: bool = False) -> TrainResult:
    """Mini-batch MSE training with Adam.

    ``loss_trace[e]`` is the mean mini-batch loss over epoch ``e``. When
    ``on_epoch`` is given it is called after each epoch and its return value
    (e.g. validation NDCG@5) is appended to ``val_trace``.
    """
    if len(data) == 0:
        raise ValueError("empty training dataset")
    if not model.trainable:
        return model.fit(data, on_epoch=on_epoch, keep_snapshots=keep_snapshots)
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=lr)
    result = TrainResult()
    n = len(data)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            tape = GradientTape()
            loss = model.loss(tape, data.batch(idx), data.reward[idx])
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingError("non-finite training loss", epoch, b)
            grads = tape.backward(loss)
            opt.step(grads)
            total += value * len(idx)
            count += len(idx)
        result.loss_trace.append(total / count)
        if on_epoch is not None:
            result.val_trace.append(float(on_epoch(epoch, model)))
        if keep_snapshots:
            result.snapshots.append(model.snapshot())
    return result
