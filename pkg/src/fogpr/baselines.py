"""Comparison models sharing the ``predict`` / ``observe`` interface of OnlineGP."""

from __future__ import annotations

import copy

import numpy as np

from .errors import InputError, NumericalHealthError
from .fo_gpr import OnlineGP
from .gp_core import Hyperparams, Posterior


class LinearModel:
    """Online linear map dp ~ W dx trained by stochastic gradient steps.

    Each observation applies W <- W + rate * (dp - W dx) dx^T. Predictions carry
    zero variance, so a controller driven by this model never explores.
    """

    def __init__(self, in_dim: int, out_dim: int, learning_rate: float = 0.1):
        if not learning_rate > 0:
            raise InputError("learning_rate must be positive")
        self.rate = float(learning_rate)
        self.W = np.zeros((out_dim, in_dim))
        self.n_seen = 0

    def predict(self, dx) -> Posterior:
        dx = np.asarray(dx, dtype=float)
        if dx.shape != (self.W.shape[1],):
            raise InputError(f"query has shape {dx.shape}, expected ({self.W.shape[1]},)")
        return Posterior(self.W @ dx, 0.0, 0.0)

    def observe(self, dx, dp) -> None:
        dx = np.asarray(dx, dtype=float)
        dp = np.asarray(dp, dtype=float)
        self.W += self.rate * np.outer(dp - self.W @ dx, dx)
        if not np.all(np.isfinite(self.W)):
            raise NumericalHealthError("linear model weights diverged")
        self.n_seen += 1

    def __len__(self):
        return self.n_seen


class FrozenModel:
    """Wraps a model and stops learning after ``freeze_at`` observations."""

    def __init__(self, model, freeze_at: int):
        if freeze_at < 0:
            raise InputError("freeze_at must be non-negative")
        self.model = model
        self.freeze_at = int(freeze_at)
        self.n_seen = 0

    @property
    def frozen(self) -> bool:
        return self.n_seen >= self.freeze_at

    def predict(self, dx) -> Posterior:
        return self.model.predict(dx)

    def observe(self, dx, dp) -> None:
        if not self.frozen:
            self.model.observe(dx, dp)
        self.n_seen += 1

    def __len__(self):
        return len(self.model)


def freeze(model) -> FrozenModel:
    """Snapshot of ``model`` that ignores all further observations."""
    return FrozenModel(copy.deepcopy(model), 0)


MODEL_KINDS = ("fo_gpr", "standard_gpr", "offline_gpr", "linear")


def make_model(kind: str, in_dim: int, out_dim: int, hp: Hyperparams | None = None,
               freeze_at: int = 1, learning_rate: float = 0.1):
    hp = hp or Hyperparams()
    if kind == "fo_gpr":
        return OnlineGP(in_dim, out_dim, hp)
    if kind == "standard_gpr":
        return OnlineGP(in_dim, out_dim, hp, bounded=False)
    if kind == "offline_gpr":
        return FrozenModel(OnlineGP(in_dim, out_dim, hp), freeze_at)
    if kind == "linear":
        return LinearModel(in_dim, out_dim, learning_rate)
    raise InputError(f"unknown model kind {kind!r}")
