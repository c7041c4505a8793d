"""RBF-kernel Gaussian process regression with a linear mean.

Outputs are vector valued but share one kernel, so a query yields a vector
mean and a single scalar variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalHealthError

# below -VAR_FLOOR a negative variance is treated as a numerical failure
VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class Hyperparams:
    sigma_rbf: float = 0.6
    sigma_n: float = 0.001
    max_size: int = 300
    eta: float = 0.5

    def __post_init__(self):
        if not self.sigma_rbf > 0:
            raise InputError(f"sigma_rbf must be positive, got {self.sigma_rbf}")
        if not self.sigma_n > 0:
            raise InputError(f"sigma_n must be positive, got {self.sigma_n}")
        if int(self.max_size) != self.max_size or self.max_size < 2:
            raise InputError(f"max_size must be an integer >= 2, got {self.max_size}")
        if not self.eta > 0:
            raise InputError(f"eta must be positive, got {self.eta}")

    @property
    def noise_var(self) -> float:
        return self.sigma_n**2


@dataclass(frozen=True)
class Dataset:
    """Paired feature velocities (rows of ``inputs``) and manipulated velocities."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if x.shape[0] != y.shape[0]:
            raise InputError(f"{x.shape[0]} inputs but {y.shape[0]} outputs")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    @classmethod
    def empty(cls, in_dim: int, out_dim: int) -> "Dataset":
        return cls(np.zeros((0, in_dim)), np.zeros((0, out_dim)))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def in_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def out_dim(self) -> int:
        return self.outputs.shape[1]


@dataclass(frozen=True)
class Posterior:
    mu: np.ndarray
    var: float
    raw_var: float = field(default=0.0, compare=False)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))


def _as_vector(a, name="vector") -> np.ndarray:
    v = np.asarray(a, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {v.shape}")
    return v


def rbf_kernel(a, b, sigma_rbf: float) -> float:
    """exp(-|a - b|^2 / (2 sigma_rbf^2))"""
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if not sigma_rbf > 0:
        raise InputError("sigma_rbf must be positive")
    d = a - b
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma_rbf**2)))


def kernel_matrix(X, Y, sigma_rbf: float) -> np.ndarray:
    """Cross-kernel between the rows of ``X`` and ``Y``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise InputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Y * Y, axis=1)[None, :]
        - 2.0 * X @ Y.T
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * sigma_rbf**2))


def _sq_dist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # coordinate-by-coordinate accumulation; kernel_vector and gram_matrix
    # both go through here so maintained and rebuilt Grams agree bit for bit
    out = np.zeros(np.broadcast_shapes(X.shape[:-1], Y.shape[:-1]))
    for k in range(X.shape[-1]):
        d = X[..., k] - Y[..., k]
        out += d * d
    return out


def kernel_vector(X, x, sigma_rbf: float) -> np.ndarray:
    """k(X, x) for stored rows ``X`` and one query ``x``; exact differences."""
    X = np.asarray(X, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.exp(-_sq_dist(X, x[None, :]) / (2.0 * sigma_rbf**2))


def gram_matrix(inputs, hp: Hyperparams) -> np.ndarray:
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if X.shape[0] == 0:
        raise InputError("gram_matrix needs at least one input")
    n = X.shape[0]
    A = np.exp(-_sq_dist(X[None, :, :], X[:, None, :]) / (2.0 * hp.sigma_rbf**2))
    A[np.diag_indices(n)] = 1.0 + hp.noise_var
    return A


def fit_linear_mean(data: Dataset) -> np.ndarray:
    """Least-squares W with outputs ~ W @ inputs; minimum-norm when rank deficient.

    An empty dataset yields the zero matrix.
    """
    if len(data) == 0:
        return np.zeros((data.out_dim, data.in_dim))
    coef, *_ = np.linalg.lstsq(data.inputs, data.outputs, rcond=None)
    return coef.T.copy()


def clamp_variance(raw: float) -> float:
    if not np.isfinite(raw):
        raise NumericalHealthError(f"posterior variance is not finite: {raw}")
    if raw < -VAR_FLOOR:
        raise NumericalHealthError(f"posterior variance {raw:.3e} is negative")
    return max(float(raw), 0.0)


def gp_predict(data: Dataset, A_inv, W, hp: Hyperparams, query) -> Posterior:
    q = _as_vector(query, "query")
    W = np.asarray(W, dtype=float)
    if W.shape[1] != q.shape[0]:
        raise InputError(f"query has dimension {q.shape[0]}, model expects {W.shape[1]}")
    prior = W @ q
    if len(data) == 0:
        return Posterior(prior, 1.0, 1.0)
    if data.in_dim != q.shape[0]:
        raise InputError(f"query has dimension {q.shape[0]}, data has {data.in_dim}")
    k = kernel_vector(data.inputs, q, hp.sigma_rbf)
    resid = data.outputs - data.inputs @ W.T
    Ak = A_inv @ k
    mu = prior + resid.T @ Ak
    raw = 1.0 - float(k @ Ak)
    if not np.all(np.isfinite(mu)):
        raise NumericalHealthError("posterior mean is not finite")
    return Posterior(mu, clamp_variance(raw), raw)
