"""Independent low-rank matrix analysis (rank-1 spatial model).

Shapes used throughout:

* ``X``: observed STFT, ``(I, J, M)``
* ``W``: demixing matrices, ``(I, N, M)``; row ``n`` is ``w_{i,n}^H`` so that
  ``y_ij = W_i x_ij``
* ``T``: NMF bases, ``(N, I, L)``; ``V``: activations, ``(N, L, J)``
* ``Y``: separated signals, ``(I, J, N)``
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .tensorlab import hermitian_eig, hermitize

__all__ = [
    "IlrmaConfig",
    "IlrmaState",
    "back_project",
    "demix",
    "ilrma_cost",
    "run_ilrma",
    "sphere",
    "update_source_model",
    "update_spatial",
]

logger = logging.getLogger(__name__)

FLOOR = 1e-12


@dataclass
class IlrmaConfig:
    n_bases: int = 10
    n_iters: int = 50
    seed: int = 0
    sphering: bool = True
    nmf_sweeps: int = 1
    normalize: bool = True

    def __post_init__(self):
        if self.n_bases < 1:
            raise ValueError("n_bases must be >= 1")
        if self.n_iters < 0:
            raise ValueError("n_iters must be >= 0")
        if self.nmf_sweeps < 1:
            raise ValueError("nmf_sweeps must be >= 1")


@dataclass
class IlrmaState:
    W: np.ndarray
    T: np.ndarray
    V: np.ndarray
    Y: np.ndarray
    sphering: np.ndarray
    cost_trace: list = field(default_factory=list)

    @property
    def n_sources(self) -> int:
        return self.W.shape[1]

    @property
    def variances(self) -> np.ndarray:
        """NMF source model ``r_ij,n`` arranged as ``(I, J, N)``."""
        return np.maximum(np.einsum("nil,nlj->ijn", self.T, self.V), FLOOR)

    def copy(self) -> "IlrmaState":
        return dataclasses.replace(
            self,
            W=self.W.copy(),
            T=self.T.copy(),
            V=self.V.copy(),
            Y=self.Y.copy(),
            sphering=self.sphering.copy(),
            cost_trace=list(self.cost_trace),
        )


def demix(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ np.swapaxes(W, -1, -2)


def _covariance(X: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    J = X.shape[1]
    Xw = X if weights is None else X * weights[..., None]
    C = np.swapaxes(Xw, -1, -2) @ np.conj(X) / J
    return hermitize(C)


def sphere(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """PCA whitening per frequency.

    Returns ``(Z, P)`` with ``Z_ij = P_i x_ij`` and ``(1/J) sum_j z z^H = I``.
    """
    I, J, M = X.shape
    if J < M:
        raise ValueError(f"need at least {M} frames to sphere {M} channels, got {J}")
    C = _covariance(X)
    eig = hermitian_eig(C)
    lam = eig.eigenvalues
    mean_eig = np.maximum(lam.mean(axis=-1, keepdims=True), 0.0)
    deficient = lam < 1e-10 * mean_eig
    if np.any(deficient):
        warnings.warn(
            f"rank-deficient covariance in {np.any(deficient, axis=-1).sum()} "
            "frequency bins; adding ridge before sphering",
            RuntimeWarning,
            stacklevel=2,
        )
        ridge = 1e-10 * np.where(mean_eig > 0, mean_eig, 1.0)
        lam = lam + ridge
    P = np.conj(np.swapaxes(eig.eigenvectors, -1, -2)) / np.sqrt(lam)[..., None]
    return np.einsum("imk,ijk->ijm", P, X), P


def ilrma_cost(X: np.ndarray, state: IlrmaState) -> float:
    """Negative log-likelihood of the rank-1 model (constants dropped)."""
    J = X.shape[1]
    R = np.einsum("nil,nlj->ijn", state.T, state.V)
    if np.any(R <= 0):
        raise ValueError("non-positive source variance")
    Y = demix(state.W, X)
    _, logabsdet = np.linalg.slogdet(state.W)
    return float(-2.0 * J * np.sum(logabsdet) + np.sum(np.abs(Y) ** 2 / R + np.log(R)))


def _update_rows(W: np.ndarray, X: np.ndarray, R: np.ndarray) -> np.ndarray:
    I, N, M = W.shape
    W = W.copy()
    E = np.broadcast_to(np.eye(N, dtype=np.complex128)[:, :, None], (I, N, N, 1))
    for n in range(N):
        G = _covariance(X, 1.0 / R[:, :, n])
        WG = W @ G
        try:
            w = np.linalg.solve(WG, E[:, n])[..., 0]
        except np.linalg.LinAlgError:
            warnings.warn("singular W G; adding ridge to G", RuntimeWarning, stacklevel=3)
            tr = np.trace(G, axis1=-2, axis2=-1).real / M
            G = G + (1e-10 * tr)[:, None, None] * np.eye(M)
            w = np.linalg.solve(W @ G, E[:, n])[..., 0]
        quad = np.einsum("im,imk,ik->i", np.conj(w), G, w).real
        w = w / np.sqrt(np.maximum(quad, np.finfo(float).tiny))[:, None]
        W[:, n, :] = np.conj(w)
    return W


def update_spatial(state: IlrmaState, X: np.ndarray) -> IlrmaState:
    """One iterative-projection sweep over all demixing rows.

    ``X`` must be in the domain ``state.W`` applies to (raw observations
    for a finished state).
    """
    W = _update_rows(state.W, X, state.variances)
    return dataclasses.replace(state, W=W, Y=demix(W, X))


def _nmf_sweep(T: np.ndarray, V: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # P: (N, I, J) power spectrogram of the separated signals
    R = np.maximum(T @ V, FLOOR)
    T = T * np.sqrt(((P / R**2) @ np.swapaxes(V, -1, -2)) / ((1.0 / R) @ np.swapaxes(V, -1, -2)))
    T = np.maximum(T, FLOOR)
    R = np.maximum(T @ V, FLOOR)
    V = V * np.sqrt((np.swapaxes(T, -1, -2) @ (P / R**2)) / (np.swapaxes(T, -1, -2) @ (1.0 / R)))
    V = np.maximum(V, FLOOR)
    return T, V


def update_source_model(state: IlrmaState, X: Optional[np.ndarray] = None, sweeps: int = 1) -> IlrmaState:
    """Multiplicative (majorization-minimization) IS-NMF updates of T then V.

    ``X`` is accepted for interface symmetry; the update only reads
    ``state.Y``.
    """
    P = np.abs(np.moveaxis(state.Y, -1, 0)) ** 2
    T, V = state.T, state.V
    for _ in range(sweeps):
        T, V = _nmf_sweep(T, V, P)
    return dataclasses.replace(state, T=T, V=V)


def _normalize(state: IlrmaState) -> IlrmaState:
    # Rescale each source to unit mean power; leaves the cost unchanged.
    power = np.mean(np.abs(state.Y) ** 2, axis=(0, 1))
    c = 1.0 / np.sqrt(np.maximum(power, FLOOR))
    return dataclasses.replace(
        state,
        W=state.W * c[None, :, None],
        Y=state.Y * c[None, None, :],
        T=np.maximum(state.T * (c**2)[:, None, None], FLOOR),
    )


def _init_state(X: np.ndarray, cfg: IlrmaConfig) -> tuple[IlrmaState, np.ndarray]:
    I, J, M = X.shape
    if cfg.sphering:
        Z, P = sphere(X)
    else:
        Z, P = X.astype(np.complex128), np.broadcast_to(np.eye(M, dtype=np.complex128), (I, M, M)).copy()
    rng = np.random.default_rng(cfg.seed)
    T = rng.uniform(0.1, 1.0, size=(M, I, cfg.n_bases))
    V = rng.uniform(0.1, 1.0, size=(M, cfg.n_bases, J))
    W = np.broadcast_to(np.eye(M, dtype=np.complex128), (I, M, M)).copy()
    return IlrmaState(W=W, T=T, V=V, Y=Z.copy(), sphering=P), Z


def run_ilrma(
    X: np.ndarray,
    cfg: IlrmaConfig = IlrmaConfig(),
    callback: Optional[Callable[[int, IlrmaState], None]] = None,
) -> IlrmaState:
    """Run ILRMA on the observed STFT ``X`` of shape ``(I, J, M)``.

    The sphering transform is folded into the returned demixing matrices, so
    ``state.Y == demix(state.W, X)`` for the raw input. ``state.cost_trace``
    holds the cost of the raw-domain model after initialization and after
    every iteration. ``callback(k, state)`` receives raw-domain snapshots.
    """
    X = np.asarray(X, dtype=np.complex128)
    I, J, M = X.shape
    if M < 2:
        raise ValueError("at least two microphones required")
    state, Z = _init_state(X, cfg)
    J = X.shape[1]
    _, logdet_p = np.linalg.slogdet(state.sphering)
    offset = -2.0 * J * float(np.sum(logdet_p))

    def raw(s: IlrmaState) -> IlrmaState:
        return dataclasses.replace(s, W=s.W @ s.sphering)

    trace = [ilrma_cost(Z, state) + offset]
    if callback is not None:
        callback(0, raw(state))
    for k in range(cfg.n_iters):
        state = update_source_model(state, sweeps=cfg.nmf_sweeps)
        state = update_spatial(state, Z)
        if cfg.normalize:
            state = _normalize(state)
        trace.append(ilrma_cost(Z, state) + offset)
        if callback is not None:
            callback(k + 1, raw(state))
    logger.debug("ILRMA cost %.6g -> %.6g over %d iterations", trace[0], trace[-1], cfg.n_iters)
    out = raw(state)
    out.cost_trace = trace
    return out


def back_project(state: IlrmaState, n: int) -> np.ndarray:
    """Scale-fixed image of source ``n`` on every channel, ``(I, J, M)``."""
    try:
        A = np.linalg.inv(state.W)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular demixing matrix") from exc
    return A[:, None, :, n] * state.Y[:, :, n, None]
