"""Bayesian linear bandit on the categorical feature: the production baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from ..features import Dataset, FeatureBatch
from ..nn import DimensionError, GradientTape, Node, NumericError, Parameter
from .base import Model, TrainResult


@dataclass(frozen=True)
class LinearBanditState:
    mu: np.ndarray
    precision: np.ndarray
    noise_var: float = 1.0
    prior_scale: float = 1.0

    @classmethod
    def prior(cls, dim: int, noise_var: float = 1.0, prior_scale: float = 1.0) -> "LinearBanditState":
        return cls(np.zeros(dim), prior_scale * np.eye(dim), noise_var, prior_scale)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def cholesky(self):
        try:
            return cho_factor(self.precision, lower=True)
        except LinAlgError as exc:
            raise NumericError(f"posterior precision is not positive definite: {exc}") from exc


def linear_posterior_update(state: LinearBanditState, x, r: float) -> LinearBanditState:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.dim,):
        raise DimensionError(f"feature dim {x.shape} vs state dim {state.dim}")
    if not np.isfinite(r):
        raise NumericError(f"non-finite reward {r}")
    return linear_posterior_update_batch(state, x[None, :], np.array([r]))


def linear_posterior_update_batch(state: LinearBanditState, X, r) -> LinearBanditState:
    """Absorb many observations at once; equal to applying them one by one."""
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != state.dim or X.shape[0] != r.shape[0]:
        raise DimensionError(f"batch shape {X.shape} / rewards {r.shape} vs state dim {state.dim}")
    if not np.all(np.isfinite(r)):
        raise NumericError("non-finite reward in batch")
    s2 = state.noise_var
    precision = state.precision + X.T @ X / s2
    rhs = state.precision @ state.mu + X.T @ r / s2
    new = LinearBanditState(state.mu, precision, state.noise_var, state.prior_scale)
    mu = cho_solve(new.cholesky(), rhs)
    return LinearBanditState(mu, precision, state.noise_var, state.prior_scale)


def sample_weights(state: LinearBanditState, rng: np.random.Generator) -> np.ndarray:
    """Draw ``w ~ N(mu, precision^-1)`` through the Cholesky factor of the precision."""
    c, lower = state.cholesky()
    z = rng.standard_normal(state.dim)
    # precision = L L^T  =>  L^-T z has covariance precision^-1
    return state.mu + solve_triangular(c, z, lower=lower, trans="T")


def thompson_score(state: LinearBanditState, x, rng: np.random.Generator) -> float:
    return float(sample_weights(state, rng) @ np.asarray(x, dtype=np.float64))


class _PosteriorMean:
    """Layer-like adapter so the linear model fits the tape-based predict path."""

    def __init__(self, mu: Parameter):
        self.mu = mu

    def forward(self, beta):
        if beta.shape[-1] != self.mu.value.shape[0]:
            raise DimensionError(f"beta dim {beta.shape[-1]} vs model dim {self.mu.value.shape[0]}")
        return beta @ self.mu.value, None


class LinearBandit(Model):
    """Posterior-mean scorer with Thompson exploration, fit by closed-form updates."""

    kind = "linear"
    trainable = False

    def __init__(self, d_beta: int, noise_var: float = 1.0, prior_scale: float = 1.0, batch_size: int = 1024):
        super().__init__(dict(d_beta=d_beta, noise_var=noise_var, prior_scale=prior_scale, batch_size=batch_size))
        st = LinearBanditState.prior(d_beta, noise_var, prior_scale)
        self.mu = Parameter(st.mu, "linear.mu")
        self.precision = Parameter(st.precision, "linear.precision")

    @property
    def state_view(self) -> LinearBanditState:
        return LinearBanditState(self.mu.value, self.precision.value, self.hyper["noise_var"], self.hyper["prior_scale"])

    def set_state(self, st: LinearBanditState):
        self.mu.value = st.mu.copy()
        self.precision.value = st.precision.copy()

    def parameters(self):
        return [self.mu, self.precision]

    def forward(self, tape: GradientTape, batch: FeatureBatch) -> Node:
        return tape.apply(_PosteriorMean(self.mu), tape.constant(batch.beta))

    def thompson_scores(self, batch: FeatureBatch, rng: np.random.Generator) -> np.ndarray:
        """One posterior draw shared by every candidate of a request."""
        return batch.beta @ sample_weights(self.state_view, rng)

    def fit(self, data: Dataset, on_epoch=None, keep_snapshots=False) -> TrainResult:
        st = self.state_view
        bs = self.hyper["batch_size"]
        for start in range(0, len(data), bs):
            sl = slice(start, start + bs)
            st = linear_posterior_update_batch(st, data.beta[sl], data.reward[sl])
        self.set_state(st)
        pred = data.beta @ st.mu
        result = TrainResult(loss_trace=[float(np.mean((pred - data.reward) ** 2))])
        if on_epoch is not None:
            result.val_trace.append(float(on_epoch(0, self)))
        if keep_snapshots:
            result.snapshots.append(self.snapshot())
        return result
