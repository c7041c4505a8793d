"""Fast online GPR: a bounded-memory GP whose Gram inverse is updated in place.

Below capacity a new observation grows the inverse by a blockwise (Schur
complement) update. At capacity the most redundant stored observation,
the one with the largest Gram row sum, is overwritten and the inverse is
corrected with a rank-2 Sherman-Morrison-Woodbury step. Both are O(N^2).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lapack

from .errors import InputError, NumericalHealthError
from .gp_core import (
    Dataset,
    Hyperparams,
    Posterior,
    fit_linear_mean,
    gp_predict,
    gram_matrix,
    kernel_vector,
)

log = logging.getLogger(__name__)

R_MIN = 1e-12
CAPACITANCE_MIN = 1e-12
HYGIENE_EVERY = 1000
HYGIENE_TOL = 1e-6
PROBE_TOL = 1e-7
N_PROBES = 4
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GpState:
    """Immutable snapshot of the online model.

    ``gram`` is the Gram matrix of the stored inputs, kept alongside its
    inverse so the forgetting rule can read row sums without rebuilding it.
    """

    data: Dataset
    A_inv: np.ndarray
    gram: np.ndarray
    W: np.ndarray
    hp: Hyperparams
    step_count: int = 0
    capacity: int | None = None

    @property
    def size(self) -> int:
        return len(self.data)

    @property
    def limit(self) -> float:
        return float("inf") if self.capacity is None else self.capacity

    @property
    def in_dim(self) -> int:
        return self.data.in_dim

    @property
    def out_dim(self) -> int:
        return self.data.out_dim


def empty_state(in_dim: int, out_dim: int, hp: Hyperparams, bounded: bool = True) -> GpState:
    """A model with no data. ``bounded=False`` never forgets (plain online GPR)."""
    return GpState(
        data=Dataset.empty(in_dim, out_dim),
        A_inv=np.zeros((0, 0)),
        gram=np.zeros((0, 0)),
        W=np.zeros((out_dim, in_dim)),
        hp=hp,
        capacity=hp.max_size if bounded else None,
    )


def _check_pair(state: GpState, dx, dp):
    dx = np.asarray(dx, dtype=float).reshape(-1)
    dp = np.asarray(dp, dtype=float).reshape(-1)
    if dx.shape[0] != state.in_dim:
        raise InputError(f"input has dimension {dx.shape[0]}, model expects {state.in_dim}")
    if dp.shape[0] != state.out_dim:
        raise InputError(f"output has dimension {dp.shape[0]}, model expects {state.out_dim}")
    if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dp))):
        raise InputError("observation contains non-finite values")
    return dx, dp


def grow_update(state: GpState, dx, dp) -> GpState:
    dx, dp = _check_pair(state, dx, dp)
    if state.size >= state.limit:
        raise InputError("grow_update called on a model at capacity")
    hp = state.hp
    X, P = state.data.inputs, state.data.outputs
    n = state.size
    c = 1.0 + hp.noise_var
    if n == 0:
        A_inv = np.array([[1.0 / c]])
        gram = np.array([[c]])
        return replace(state, data=Dataset(dx[None, :], dp[None, :]), A_inv=A_inv, gram=gram)

    b = kernel_vector(X, dx, hp.sigma_rbf)
    Ab = state.A_inv @ b
    r = c - float(b @ Ab)
    if r <= R_MIN:
        j = int(np.argmax(b))
        log.info("near-duplicate input (r=%.3e); averaging into stored point %d", r, j)
        P = P.copy()
        P[j] = 0.5 * (P[j] + dp)
        return replace(state, data=Dataset(X, P))

    A_inv = np.empty((n + 1, n + 1))
    A_inv[:n, :n] = state.A_inv + np.outer(Ab, Ab) / r
    A_inv[:n, n] = -Ab / r
    A_inv[n, :n] = -Ab / r
    A_inv[n, n] = 1.0 / r
    gram = np.empty((n + 1, n + 1))
    gram[:n, :n] = state.gram
    gram[:n, n] = b
    gram[n, :n] = b
    gram[n, n] = c
    return replace(
        state,
        data=Dataset(np.vstack([X, dx]), np.vstack([P, dp])),
        A_inv=A_inv,
        gram=gram,
    )


def select_forget_index(state: GpState) -> int:
    """Row with the largest Gram row sum; the lowest index wins ties."""
    if state.size == 0:
        raise InputError("cannot forget from an empty model")
    # argmax returns the first maximum
    return int(np.argmax(state.gram.sum(axis=1)))


def swap_update(state: GpState, i_star: int, dx, dp, method: str = "schur") -> GpState:
    """Overwrite stored point ``i_star`` with a new pair and correct the inverse.

    ``method="woodbury"`` applies the rank-2 update in one shot through its
    2x2 capacitance matrix. ``method="schur"`` applies the same change as a
    removal of row ``i_star`` followed by a blockwise growth into the freed
    slot; it is algebraically identical and loses far fewer digits when the
    Gram matrix is nearly singular.
    """
    dx, dp = _check_pair(state, dx, dp)
    n = state.size
    if not 0 <= i_star < n:
        raise InputError(f"index {i_star} out of range for {n} stored points")
    hp = state.hp
    X = state.data.inputs.copy()
    P = state.data.outputs.copy()
    k_old = kernel_vector(X, X[i_star], hp.sigma_rbf)
    X[i_star] = dx
    P[i_star] = dp
    k_new = kernel_vector(X, dx, hp.sigma_rbf)

    gram = state.gram.copy()
    gram[i_star, :] = k_new
    gram[:, i_star] = k_new
    gram[i_star, i_star] = 1.0 + hp.noise_var

    if method == "woodbury":
        A_inv = _woodbury_swap(state.A_inv, i_star, k_new - k_old)
    elif method == "schur":
        A_inv = _schur_swap(state.A_inv, i_star, k_new, 1.0 + hp.noise_var)
    else:
        raise InputError(f"unknown swap method {method!r}")
    if A_inv is None:
        A_inv = dense_inverse(gram)
    return replace(state, data=Dataset(X, P), A_inv=A_inv, gram=gram)


def _woodbury_swap(B: np.ndarray, i: int, dk: np.ndarray) -> np.ndarray | None:
    # A_new - A_old = U V^T with U = [e, w], V = [w, e] and
    # w = (I - e e^T / 2) dk; the halving makes the (i, i) entry of
    # e w^T + w e^T equal to dk[i] (zero here, both diagonals are 1 + sn^2).
    w = dk.copy()
    w[i] *= 0.5
    Be = B[:, i]
    Bw = B @ w
    C = np.array(
        [
            [1.0 + w @ Be, w @ Bw],
            [Be[i], 1.0 + Bw[i]],
        ]
    )
    det = C[0, 0] * C[1, 1] - C[0, 1] * C[1, 0]
    if abs(det) < CAPACITANCE_MIN:
        log.warning("singular capacitance (det=%.3e); re-inverting densely", det)
        return None
    C_inv = np.array([[C[1, 1], -C[0, 1]], [-C[1, 0], C[0, 0]]]) / det
    A_inv = B - np.column_stack([Be, Bw]) @ (C_inv @ np.vstack([Bw, Be]))
    return 0.5 * (A_inv + A_inv.T)


def _schur_swap(B: np.ndarray, i: int, k_new: np.ndarray, c: float) -> np.ndarray | None:
    d = B[i, i]
    if not d > 0:
        log.warning("non-positive inverse diagonal %.3e; re-inverting densely", d)
        return None
    col = B[:, i].copy()
    # inverse of the Gram with point i removed, embedded with a zero row/col at i
    A_inv = B - np.outer(col, col / d)
    A_inv[i, :] = 0.0
    A_inv[:, i] = 0.0
    b = k_new.copy()
    b[i] = 0.0
    Ab = A_inv @ b
    r = c - float(b @ Ab)
    if r <= R_MIN:
        log.warning("degenerate swap (r=%.3e); re-inverting densely", r)
        return None
    A_inv += np.outer(Ab, Ab / r)
    A_inv[:, i] = -Ab / r
    A_inv[i, :] = -Ab / r
    A_inv[i, i] = 1.0 / r
    return A_inv


def dense_inverse(gram: np.ndarray) -> np.ndarray:
    """Cholesky-based inverse of an SPD Gram matrix, symmetrised."""
    c, info = lapack.dpotrf(gram, lower=1)
    if info != 0:
        raise NumericalHealthError(f"Gram matrix is not positive definite (potrf info={info})")
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise NumericalHealthError(f"Cholesky inversion failed (potri info={info})")
    return np.tril(inv) + np.tril(inv, -1).T


def _probe_block(n: int) -> np.ndarray:
    z = _PROBES.get(n)
    if z is None:
        # one sign vector can cancel against a rank-one error; a few columns rarely all do
        z = np.random.default_rng(n).choice([-1.0, 1.0], size=(n, N_PROBES))
        _PROBES[n] = z
    return z


_PROBES: dict[int, np.ndarray] = {}


def probe_residual(state: GpState) -> float:
    """O(N^2) estimate of the inverse drift: max |A_inv A Z - Z| over a fixed block of sign vectors."""
    if state.size == 0:
        return 0.0
    z = _probe_block(state.size)
    return float(np.max(np.abs(state.A_inv @ (state.gram @ z) - z)))


def consistency_residual(state: GpState) -> float:
    """max |A_inv @ A - I| against a Gram rebuilt from the stored inputs."""
    if state.size == 0:
        return 0.0
    A = gram_matrix(state.data.inputs, state.hp)
    return float(np.max(np.abs(state.A_inv @ A - np.eye(state.size))))


def rebuild(state: GpState) -> GpState:
    """Recompute the Gram, its inverse and the mean weights from the stored data."""
    if state.size == 0:
        return replace(state, W=fit_linear_mean(state.data))
    gram = gram_matrix(state.data.inputs, state.hp)
    return replace(state, gram=gram, A_inv=dense_inverse(gram), W=fit_linear_mean(state.data))


def add_observation(state: GpState, dx, dp) -> GpState:
    if state.size < state.limit:
        new = grow_update(state, dx, dp)
    else:
        i_star = select_forget_index(state)
        new = swap_update(state, i_star, dx, dp)
    new = replace(new, W=fit_linear_mean(new.data), step_count=state.step_count + 1)
    probe = probe_residual(new)
    if probe > PROBE_TOL:
        log.debug("probe drift %.3e at step %d; re-inverting", probe, new.step_count)
        new = replace(new, A_inv=dense_inverse(new.gram))
    if new.step_count % HYGIENE_EVERY == 0:
        res = consistency_residual(new)
        if res > HYGIENE_TOL:
            log.warning("inverse drift %.3e at step %d; re-inverting", res, new.step_count)
            gram = gram_matrix(new.data.inputs, new.hp)
            new = replace(new, gram=gram, A_inv=dense_inverse(gram))
    return new


def predict(state: GpState, dx) -> Posterior:
    return gp_predict(state.data, state.A_inv, state.W, state.hp, dx)


def state_to_dict(state: GpState) -> dict:
    hp = state.hp
    return {
        "schema_version": SCHEMA_VERSION,
        "hyperparams": {
            "sigma_rbf": hp.sigma_rbf,
            "sigma_n": hp.sigma_n,
            "max_size": hp.max_size,
            "eta": hp.eta,
        },
        "bounded": state.capacity is not None,
        "in_dim": state.in_dim,
        "out_dim": state.out_dim,
        "step_count": state.step_count,
        "inputs": state.data.inputs.tolist(),
        "outputs": state.data.outputs.tolist(),
    }


def state_from_dict(d: dict) -> GpState:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"unsupported schema_version {d.get('schema_version')!r}")
    hp = Hyperparams(**d["hyperparams"])
    state = empty_state(int(d["in_dim"]), int(d["out_dim"]), hp, bounded=bool(d["bounded"]))
    inputs = np.asarray(d["inputs"], dtype=float).reshape(-1, state.in_dim)
    outputs = np.asarray(d["outputs"], dtype=float).reshape(-1, state.out_dim)
    if len(inputs) > state.limit:
        raise InputError(f"{len(inputs)} stored points exceed capacity {hp.max_size}")
    state = replace(state, data=Dataset(inputs, outputs), step_count=int(d["step_count"]))
    return rebuild(state)


def save_state(state: GpState, path) -> None:
    with open(path, "w") as fh:
        json.dump(state_to_dict(state), fh)


def load_state(path) -> GpState:
    with open(path) as fh:
        return state_from_dict(json.load(fh))


class OnlineGP:
    """Mutable handle around a :class:`GpState` for use inside control loops."""

    def __init__(self, in_dim: int, out_dim: int, hp: Hyperparams, bounded: bool = True):
        self.state = empty_state(in_dim, out_dim, hp, bounded=bounded)

    @property
    def hp(self) -> Hyperparams:
        return self.state.hp

    def __len__(self) -> int:
        return self.state.size

    def predict(self, dx) -> Posterior:
        return predict(self.state, dx)

    def observe(self, dx, dp) -> None:
        self.state = add_observation(self.state, dx, dp)
