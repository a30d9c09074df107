from __future__ import annotations

from typing import Callable

import numpy as np

from .ops import NumericError
from .tape import GradientTape, Parameter


def grad_check(f: Callable[[np.ndarray], tuple[float, np.ndarray]], params, eps: float = 1e-5,
               indices=None) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(x)`` returns ``(value, gradient)``. The error for each entry is
    ``|analytic - numeric| / max(1, |analytic|)``. ``indices`` restricts the
    check to a subset of flat positions.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    x = np.array(params, dtype=np.float64)
    value, analytic = f(x.copy())
    if not np.isfinite(value):
        raise NumericError("function value is not finite")
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    flat = x.ravel()
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x.copy())[0]
        flat[i] = orig - eps
        f_minus = f(x.copy())[0]
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite value while perturbing entry {i}")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


def check_parameters(loss_fn: Callable[[GradientTape], object], parameters: list[Parameter],
                     eps: float = 1e-5, max_entries: int | None = None,
                     rng: np.random.Generator | None = None) -> float:
    """Run :func:`grad_check` over each parameter of a model.

    ``loss_fn(tape)`` must build the scalar loss node on ``tape``. Parameters
    are perturbed in place and restored afterwards.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p in parameters:
        saved = p.value.copy()

        def f(x, p=p):
            p.value = x.reshape(saved.shape)
            tape = GradientTape()
            loss = loss_fn(tape)
            tape.backward(loss)
            return float(loss.value), tape.grad(p)

        idx = None
        if max_entries is not None and saved.size > max_entries:
            idx = rng.choice(saved.size, size=max_entries, replace=False)
        try:
            worst = max(worst, grad_check(f, saved, eps, indices=idx))
        finally:
            p.value = saved
    return worst
