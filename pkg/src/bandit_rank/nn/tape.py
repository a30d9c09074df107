"""Layer-granular reverse-mode differentiation.

Every differentiable building block is a :class:`Layer` with a hand-derived
``backward``. A :class:`GradientTape` records layer applications in order and
replays them in reverse, accumulating parameter gradients additively.
"""
from __future__ import annotations

import numpy as np

from .ops import DimensionError, glorot_uniform, softmax


class Parameter:
    __slots__ = ("value", "name")

    def __init__(self, value, name: str = ""):
        self.value = np.array(value, dtype=np.float64)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    """A value flowing through a recorded computation."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None


class GradientTape:
    """Records ``(layer, inputs, output, cache)`` tuples.

    With ``record=False`` layers still run but nothing is kept, which is the
    inference path.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._ops: list = []
        self.grads: dict[Parameter, np.ndarray] = {}

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64))

    def apply(self, layer: "Layer", *inputs: Node) -> Node:
        y, cache = layer.forward(*(n.value for n in inputs))
        out = Node(y)
        if self.record:
            self._ops.append((layer, inputs, out, cache))
        return out

    def __len__(self):
        return len(self._ops)

    @property
    def ops(self) -> tuple:
        """Recorded ``(layer, inputs, output, cache)`` tuples, oldest first."""
        return tuple(self._ops)

    def backward(self, output: Node, seed=None) -> dict[Parameter, np.ndarray]:
        if not self.record:
            raise RuntimeError("tape was created with record=False")
        output.grad = np.ones_like(output.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for layer, inputs, out, cache in reversed(self._ops):
            if out.grad is None:
                continue
            dxs, pgrads = layer.backward(cache, out.grad)
            for node, dx in zip(inputs, dxs):
                if dx is None:
                    continue
                node.grad = dx if node.grad is None else node.grad + dx
            for p, g in pgrads.items():
                if p in self.grads:
                    self.grads[p] = self.grads[p] + g
                else:
                    self.grads[p] = np.zeros_like(p.value) + g
        return self.grads

    def grad(self, p: Parameter) -> np.ndarray:
        return self.grads.get(p, np.zeros_like(p.value))


class Layer:
    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, *xs):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError


class Dense(Layer):
    """Affine map along the last axis: ``x @ W + b``."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, name: str = "dense"):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter(glorot_uniform(n_in, n_out, rng), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), f"{name}.bias") if bias else None

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"dense layer expects last dim {self.n_in}, got shape {x.shape}")
        y = x @ self.weight.value
        if self.bias is not None:
            y = y + self.bias.value
        return y, x

    def backward(self, x, dy):
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        grads = {self.weight: x2.T @ dy2}
        if self.bias is not None:
            grads[self.bias] = dy2.sum(axis=0)
        return (dy @ self.weight.value.T,), grads


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, dy):
        return (dy * mask,), {}


class Softmax(Layer):
    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, x):
        y = softmax(x, axis=self.axis)
        return y, y

    def backward(self, y, dy):
        dx = y * (dy - np.sum(dy * y, axis=self.axis, keepdims=True))
        return (dx,), {}


class GlobalAvgPool(Layer):
    """Mean over one axis (the length axis of a channel map)."""

    def __init__(self, axis: int):
        self.axis = axis

    def forward(self, x):
        return x.mean(axis=self.axis), x.shape

    def backward(self, shape, dy):
        n = shape[self.axis]
        dx = np.broadcast_to(np.expand_dims(dy, self.axis) / n, shape).copy()
        return (dx,), {}


class Concat(Layer):
    def forward(self, *xs):
        return np.concatenate(xs, axis=-1), [x.shape[-1] for x in xs]

    def backward(self, widths, dy):
        cuts = np.cumsum(widths)[:-1]
        return tuple(np.split(dy, cuts, axis=-1)), {}


class Add(Layer):
    def forward(self, a, b):
        return a + b, None

    def backward(self, _, dy):
        return (dy, dy), {}


class Squeeze(Layer):
    """(N, 1) -> (N,)."""

    def forward(self, x):
        if x.shape[-1] != 1:
            raise DimensionError(f"cannot squeeze trailing axis of shape {x.shape}")
        return x[..., 0], x.shape

    def backward(self, shape, dy):
        return (dy.reshape(shape),), {}


class MSELoss(Layer):
    """Mean squared error against a fixed target; output is a 0-d array."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def forward(self, pred):
        if pred.shape != self.target.shape:
            raise DimensionError(f"prediction shape {pred.shape} vs target {self.target.shape}")
        diff = pred - self.target
        return np.asarray(np.mean(diff**2)), diff

    def backward(self, diff, dy):
        return (dy * 2.0 * diff / diff.size,), {}


class MLP:
    """Dense/ReLU stack ending in a linear layer; helper, not a Layer itself."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, name: str = "mlp"):
        self.layers: list[Layer] = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.layers.append(Dense(a, b, rng, name=f"{name}.{i}"))
            if i < len(sizes) - 2:
                self.layers.append(ReLU())

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, tape: GradientTape, x: Node) -> Node:
        for layer in self.layers:
            x = tape.apply(layer, x)
        return x
