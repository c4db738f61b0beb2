"""Full-rank noise covariance restoration on top of a finished ILRMA run.

ILRMA's rank-1 model leaves the diffuse noise described by the ``M - 1``
non-target outputs, i.e. a rank-``(M-1)`` spatial covariance ``R'``. The
missing direction ``b`` (the null vector of ``R'``) is restored with a
per-frequency weight ``lambda`` estimated jointly with the target and noise
variances by MAP-EM; a multichannel Wiener filter then extracts the target.

Shapes: ``a_h`` ``(I, M)``, ``r_h``/``r_u`` ``(I, J)``, ``R_prime``
``(I, M, M)``, ``b`` ``(I, M)``, ``lam`` ``(I,)``.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import gammaln

from .ilrma import IlrmaState, back_project
from .tensorlab import hermitian_eig, hermitize, pseudoinverse, solve_hpd

__all__ = [
    "EMConfig",
    "EMResult",
    "EStats",
    "NoiseModel",
    "TargetModel",
    "build_noise_covariance",
    "e_step",
    "extract_lost_basis",
    "extract_target_steering",
    "init_models",
    "init_variances",
    "m_step",
    "map_objective",
    "run_em",
    "select_target_index",
    "wiener_filter",
]

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-16
LAMBDA_FLOOR = 1e-12


@dataclass
class EMConfig:
    alpha: float = 0.7
    beta: float = 1e-16
    n_iters: int = 200

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.n_iters < 0:
            raise ValueError("n_iters must be >= 0")


@dataclass
class TargetModel:
    a_h: np.ndarray
    r_h: np.ndarray
    alpha: float = 0.7
    beta: float = 1e-16


@dataclass
class NoiseModel:
    R_prime: np.ndarray
    b: np.ndarray
    lam: np.ndarray
    r_u: np.ndarray

    @property
    def R_u(self) -> np.ndarray:
        """Full-rank spatial covariance ``R' + lambda b b^H``."""
        return self.R_prime + self.lam[:, None, None] * np.einsum("im,ik->imk", self.b, np.conj(self.b))


@dataclass
class EStats:
    r_h_hat: np.ndarray
    R_u_hat: np.ndarray


class EMResult(NamedTuple):
    target: TargetModel
    noise: NoiseModel
    objective: list


def _mixing(state: IlrmaState) -> np.ndarray:
    try:
        return np.linalg.inv(state.W)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular demixing matrix") from exc


def _check_index(state: IlrmaState, n_h: int) -> int:
    n_h = int(n_h)
    if not 0 <= n_h < state.n_sources:
        raise IndexError(f"target index {n_h} out of range for {state.n_sources} sources")
    return n_h


def extract_target_steering(state: IlrmaState, n_h: int) -> np.ndarray:
    """Column ``n_h`` of ``W_i^{-1}`` for every frequency."""
    return _mixing(state)[:, :, _check_index(state, n_h)].copy()


def build_noise_covariance(state: IlrmaState, X: np.ndarray, n_h: int) -> np.ndarray:
    """Back-projected rank-``(M-1)`` noise covariance ``R'_i``.

    ``R'_i = (1/J) sum_j A_i diag(|y_ij,1|^2, .., 0, .., |y_ij,N|^2) A_i^H``
    with ``A_i = W_i^{-1}`` and the target entry ``n_h`` zeroed.
    """
    n_h = _check_index(state, n_h)
    A = _mixing(state)
    Y = np.einsum("inm,ijm->ijn", state.W, X)
    power = np.mean(np.abs(Y) ** 2, axis=1)
    power[:, n_h] = 0.0
    return hermitize(np.einsum("imn,in,ikn->imk", A, power, np.conj(A)))


def extract_lost_basis(R_prime: np.ndarray, w_nh: np.ndarray) -> np.ndarray:
    """Unit null vector of ``R'`` taken as the normalized target demixing row.

    ``w_nh`` is the demixing filter ``w_{i,n_h}`` (so that ``y = w^H x``).
    Where its norm vanishes the eigenvector of the smallest eigenvalue of
    ``R'`` is used instead.
    """
    R_prime = np.asarray(R_prime)
    w = np.asarray(w_nh, dtype=np.complex128)
    single = w.ndim == 1
    if single:
        w, R_prime = w[None], R_prime[None]
    norm = np.linalg.norm(w, axis=-1)
    b = np.empty_like(w)
    ok = norm > 0
    b[ok] = w[ok] / norm[ok, None]
    if np.any(~ok):
        R_bad = R_prime[~ok]
        if np.any(np.all(R_bad == 0, axis=(-2, -1))):
            raise ValueError("cannot determine lost basis: zero filter and zero covariance")
        b[~ok] = hermitian_eig(R_bad).eigenvectors[..., :, 0]
    return b[0] if single else b


def _min_nonzero_eigenvalue(R_prime: np.ndarray) -> np.ndarray:
    w = hermitian_eig(R_prime).eigenvalues
    tol = 1e-10 * np.max(w, axis=-1, keepdims=True)
    return np.min(np.where(w > tol, w, np.inf), axis=-1)


def init_variances(
    state: IlrmaState, X: np.ndarray, n_h: int, R_prime: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Initial ``(r_h, r_u, lam)`` from the ILRMA estimates.

    ``r_h`` is the NMF model of the target, ``r_u`` the pseudoinverse-whitened
    power of the back-projected noise image divided by ``M``, and ``lam`` the
    smallest nonzero eigenvalue of ``R'``.
    """
    n_h = _check_index(state, n_h)
    M = X.shape[-1]
    r_h = np.maximum(state.T[n_h] @ state.V[n_h], VAR_FLOOR)
    y_u = sum(back_project(state, n) for n in range(state.n_sources) if n != n_h)
    R_pinv = pseudoinverse(R_prime)
    r_u = np.einsum("ijm,imk,ijk->ij", np.conj(y_u), R_pinv, y_u).real / M
    lam = _min_nonzero_eigenvalue(R_prime)
    lam = np.where(np.isfinite(lam), lam, LAMBDA_FLOOR)
    return r_h, np.maximum(r_u, VAR_FLOOR), lam


def _mixture_covariance(target: TargetModel, noise: NoiseModel) -> tuple[np.ndarray, np.ndarray]:
    R_tilde = noise.R_u
    aa = np.einsum("im,ik->imk", target.a_h, np.conj(target.a_h))
    Rx = target.r_h[..., None, None] * aa[:, None] + noise.r_u[..., None, None] * R_tilde[:, None]
    return hermitize(Rx), R_tilde


def _inverse_hpd(R: np.ndarray) -> np.ndarray:
    eye = np.broadcast_to(np.eye(R.shape[-1], dtype=np.complex128), R.shape)
    return hermitize(solve_hpd(R, eye))


def _posterior(X, target, noise, with_stats=True):
    """E-step moments and marginal log-likelihood.

    ``R^x_ij = r_h a a^H + r_u R~`` differs from the per-frequency matrix
    ``r_u R~`` by a rank-1 term, so every per-bin inverse is applied through
    ``R~^{-1}`` and the Sherman-Morrison identity; ``d = 1 + rho kappa`` is
    the corresponding denominator with ``rho = r_h / r_u`` and
    ``kappa = a^H R~^{-1} a``.
    """
    I, J, M = X.shape
    a = target.a_h
    r_h, r_u = target.r_h, noise.r_u
    R_tilde = noise.R_u
    R_inv = _inverse_hpd(R_tilde)
    _, logdet_R = np.linalg.slogdet(R_tilde)

    p = np.einsum("imk,ik->im", R_inv, a)
    kappa = np.einsum("im,im->i", np.conj(a), p).real
    q = np.einsum("imk,ijk->ijm", R_inv, X)
    gamma = np.einsum("im,ijm->ij", np.conj(a), q)
    rho = r_h / r_u
    d = 1.0 + rho * kappa[:, None]

    logdet = M * np.log(r_u) + logdet_R[:, None] + np.log(d)
    quad = (np.einsum("ijm,ijm->ij", np.conj(X), q).real - rho * np.abs(gamma) ** 2 / d) / r_u
    loglik = -np.sum(logdet) - np.sum(quad) - I * J * M * np.log(np.pi)
    if not with_stats:
        return None, loglik

    mean_h = rho * gamma / d  # posterior mean of s_h
    r_h_hat = r_h / d + np.abs(mean_h) ** 2
    v = X - mean_h[..., None] * a[:, None, :]  # posterior mean of u
    R_u_hat = (r_h / d)[..., None, None] * np.einsum("im,ik->imk", a, np.conj(a))[:, None] + np.einsum(
        "ijm,ijk->ijmk", v, np.conj(v)
    )
    return EStats(r_h_hat=r_h_hat, R_u_hat=hermitize(R_u_hat)), loglik


def e_step(X: np.ndarray, target: TargetModel, noise: NoiseModel) -> EStats:
    """Posterior second moments of the target source and noise image."""
    return _posterior(np.asarray(X, dtype=np.complex128), target, noise)[0]


def _log_prior(r_h: np.ndarray, alpha: float, beta: float) -> float:
    return float(
        np.sum(alpha * np.log(beta) - gammaln(alpha) - (alpha + 1.0) * np.log(r_h) - beta / r_h)
    )


def map_objective(X: np.ndarray, target: TargetModel, noise: NoiseModel) -> float:
    """Marginal log-likelihood of ``X`` plus the inverse-gamma log-prior on ``r_h``."""
    _, loglik = _posterior(np.asarray(X, dtype=np.complex128), target, noise, with_stats=False)
    return float(loglik) + _log_prior(target.r_h, target.alpha, target.beta)


def m_step(stats: EStats, noise: NoiseModel, target: TargetModel) -> tuple[TargetModel, NoiseModel]:
    """Coordinate-ascent M-step: ``r_h``, then ``lam`` (via ``K``), ``R_u``, ``r_u``."""
    M = noise.b.shape[-1]
    r_h = np.maximum((stats.r_h_hat + target.beta) / (target.alpha + 2.0), VAR_FLOOR)

    K = np.mean(stats.R_u_hat / noise.r_u[..., None, None], axis=1)
    lam = np.einsum("im,imk,ik->i", np.conj(noise.b), K, noise.b).real
    floor = LAMBDA_FLOOR * np.trace(noise.R_prime, axis1=-2, axis2=-1).real
    lam = np.maximum(lam, np.maximum(floor, np.finfo(float).tiny))

    updated = dataclasses.replace(noise, lam=lam)
    R_inv = _inverse_hpd(updated.R_u)
    r_u = np.einsum("imk,ijkm->ij", R_inv, stats.R_u_hat).real / M
    updated.r_u = np.maximum(r_u, VAR_FLOOR)
    return dataclasses.replace(target, r_h=r_h), updated


def select_target_index(state: IlrmaState) -> int:
    """Pick the ILRMA output carrying the most back-projected power.

    At low SNR the diffuse noise is spread over the ``M - 1`` noise outputs,
    so the single target output is the most energetic one.
    """
    A = np.abs(_mixing(state)) ** 2  # (I, M, N)
    power = np.mean(np.abs(state.Y) ** 2, axis=1)  # (I, N)
    return int(np.argmax(np.einsum("imn,in->n", A, power)))


def init_models(
    state: IlrmaState, X: np.ndarray, n_h: int, cfg: EMConfig = EMConfig()
) -> tuple[TargetModel, NoiseModel]:
    X = np.asarray(X, dtype=np.complex128)
    if X.shape[-1] < 2:
        raise ValueError("at least two microphones required")
    n_h = _check_index(state, n_h)
    a_h = extract_target_steering(state, n_h)
    R_prime = build_noise_covariance(state, X, n_h)
    b = extract_lost_basis(R_prime, np.conj(state.W[:, n_h, :]))
    r_h, r_u, lam = init_variances(state, X, n_h, R_prime)
    target = TargetModel(a_h=a_h, r_h=r_h, alpha=cfg.alpha, beta=cfg.beta)
    noise = NoiseModel(R_prime=R_prime, b=b, lam=lam, r_u=r_u)
    return target, noise


def run_em(
    X: np.ndarray,
    state: IlrmaState,
    n_h: int,
    cfg: EMConfig = EMConfig(),
    callback: Optional[Callable[[int, TargetModel, NoiseModel], None]] = None,
) -> EMResult:
    """Initialize from ``state`` and run ``cfg.n_iters`` EM iterations.

    ``objective`` holds the MAP objective at initialization and after each
    iteration (``n_iters + 1`` entries).
    """
    X = np.asarray(X, dtype=np.complex128)
    target, noise = init_models(state, X, n_h, cfg)
    if callback is not None:
        callback(0, target, noise)
    prior = lambda t: _log_prior(t.r_h, t.alpha, t.beta)  # noqa: E731

    objective = []
    for k in range(cfg.n_iters):
        stats, loglik = _posterior(X, target, noise)
        objective.append(float(loglik) + prior(target))
        target, noise = m_step(stats, noise, target)
        if callback is not None:
            callback(k + 1, target, noise)
    objective.append(map_objective(X, target, noise))
    logger.debug("EM objective %.6g -> %.6g", objective[0], objective[-1])
    return EMResult(target, noise, objective)


def wiener_filter(X: np.ndarray, target: TargetModel, noise: NoiseModel) -> tuple[np.ndarray, np.ndarray]:
    """Multichannel Wiener estimates ``(h_hat, u_hat)`` of target and noise images."""
    X = np.asarray(X, dtype=np.complex128)
    Rx, R_u = _mixture_covariance(target, noise)
    inv_x = solve_hpd(Rx, X)
    h_hat = target.r_h[..., None] * target.a_h[:, None, :] * np.einsum(
        "im,ijm->ij", np.conj(target.a_h), inv_x
    )[..., None]
    u_hat = noise.r_u[..., None] * np.einsum("imk,ijk->ijm", R_u, inv_x)
    return h_hat, u_hat
