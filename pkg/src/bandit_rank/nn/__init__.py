"""Minimal float64 kernel: primitives, layers with analytic gradients, Adam."""
from .gradcheck import check_parameters, grad_check
from .ops import (
    DimensionError,
    NumericError,
    glorot_uniform,
    mae_loss,
    matmul,
    mse_loss,
    sigmoid,
    softmax,
)
from .optim import Adam, AdamState, adam_step
from .tape import (
    MLP,
    Add,
    Concat,
    Dense,
    GlobalAvgPool,
    GradientTape,
    Layer,
    MSELoss,
    Node,
    Parameter,
    ReLU,
    Softmax,
    Squeeze,
)

__all__ = [
    "Adam", "AdamState", "Add", "Concat", "Dense", "DimensionError", "GlobalAvgPool",
    "GradientTape", "Layer", "MLP", "MSELoss", "Node", "NumericError", "Parameter", "ReLU",
    "Softmax", "Squeeze", "adam_step", "check_parameters", "glorot_uniform", "grad_check",
    "mae_loss", "matmul", "mse_loss", "sigmoid", "softmax",
]
