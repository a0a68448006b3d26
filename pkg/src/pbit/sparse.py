"""Second receiver step: recover the binary element states from ``z``.

The matched filter collapses the block to ``z_tilde = A s + h_d + w``; after
removing ``h_d`` the states are estimated by GAMP with a Bernoulli prior, or
by the greedy OMP/CoSaMP baselines. The two genie-aided references (true
``z`` for the symbols, true ``x`` for the states) live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .factor import demap
from .model import ChannelState, Constellation, SystemConfig


@dataclass(frozen=True, eq=False)
class SparseObservation:
    """``y = A s + w`` with ``h_d`` already removed from ``z_tilde``."""

    z_tilde: np.ndarray
    w_var: float
    A: np.ndarray
    h_d: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.z_tilde).size
        if self.A.shape[0] != M or self.h_d.size != M:
            raise ValueError("z_tilde, A and h_d disagree on M")
        if not self.w_var > 0:
            raise ValueError("w_var must be positive")

    @property
    def y(self) -> np.ndarray:
        return self.z_tilde - self.h_d


@dataclass(eq=False)
class SparseEstimate:
    s_hat: np.ndarray
    s_posterior: np.ndarray
    method: str
    iterations: int = 0
    diverged: bool = False


def form_observation(Y, x_tilde, cfg: SystemConfig, ch: ChannelState, A=None,
                     w_var_floor: float = 1e-12) -> SparseObservation:
    """Matched filter ``z_tilde = Y conj(x_tilde) / (L P)``.

    The distortion variance is the nominal ``sigma_w^2 / (L P)``, the value
    that holds when every symbol decision is correct. ``A`` defaults to
    ``ch.A``.
    """
    Y = np.asarray(Y, dtype=complex)
    x_tilde = np.asarray(x_tilde, dtype=complex).ravel()
    if Y.shape != (ch.M, cfg.L) or x_tilde.size != cfg.L:
        raise ValueError("block dimensions do not match the configuration")
    A = ch.A if A is None else np.asarray(A, dtype=complex)
    if A is None:
        raise ValueError("coefficient matrix A is not set; call ChannelState.with_phases first")
    z_tilde = (Y @ x_tilde.conj()) / (cfg.L * cfg.P)
    w_var = max(cfg.sigma_w2 / (cfg.L * cfg.P), w_var_floor)
    return SparseObservation(z_tilde=z_tilde, w_var=w_var, A=A, h_d=ch.h_d)


def _bernoulli_denoiser(r_hat, nu_r, rho):
    """Posterior mean of ``s in {0, 1}`` given ``r = s + CN(0, nu_r)``."""
    if rho >= 1.0:
        return np.ones(r_hat.shape)
    if rho <= 0.0:
        return np.zeros(r_hat.shape)
    llr = np.log(rho / (1 - rho)) + (2 * r_hat.real - 1.0) / nu_r
    return expit(llr)


def bernoulli_posterior(q, tau, rho):
    """Public form of the scalar denoiser (``q`` pseudo-observation, ``tau`` its variance)."""
    q = np.asarray(q, dtype=complex)
    return _bernoulli_denoiser(q, np.broadcast_to(np.asarray(tau, dtype=float), q.shape), rho)


def _hard_decision(post, rho):
    s = (post > 0.5).astype(np.int8)
    if rho >= 0.5:
        s[post == 0.5] = 1
    return s


def gamp_recover(obs: SparseObservation, rho: float, max_iter: int = 50, tol: float = 1e-8,
                 damping: float = 0.0) -> SparseEstimate:
    """GAMP for ``y = A s + w`` with i.i.d. Bernoulli(rho) ``s`` and AWGN ``w``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    A = obs.A
    y = obs.y
    M, N = A.shape
    A2 = np.abs(A) ** 2
    A2H = A2.T
    nu_w = obs.w_var

    s_hat = np.full(N, rho)
    nu_s = np.full(N, rho * (1 - rho))
    u_hat = np.zeros(M, dtype=complex)
    step = 1.0 - damping
    diverged = False
    it = 0
    if rho in (0.0, 1.0):
        return SparseEstimate(s_hat=np.full(N, int(rho), dtype=np.int8),
                              s_posterior=s_hat.copy(), method="gamp", iterations=0)
    for it in range(1, max_iter + 1):
        nu_p = A2 @ nu_s
        p_hat = A @ s_hat - nu_p * u_hat
        u_new = (y - p_hat) / (nu_p + nu_w)
        nu_u = 1.0 / (nu_p + nu_w)
        u_hat = u_new if it == 1 else (1 - step) * u_hat + step * u_new

        nu_r = 1.0 / np.maximum(A2H @ nu_u, 1e-300)
        r_hat = s_hat + nu_r * (A.conj().T @ u_hat)
        s_new = _bernoulli_denoiser(r_hat, nu_r, rho)
        if not np.all(np.isfinite(s_new)):
            diverged = True
            break
        change = np.linalg.norm(s_new - s_hat)
        s_hat = s_new if it == 1 else (1 - step) * s_hat + step * s_new
        nu_s = s_hat * (1 - s_hat)
        if change < tol:
            break
    post = np.clip(s_hat, 0.0, 1.0)
    return SparseEstimate(s_hat=_hard_decision(post, rho), s_posterior=post,
                          method="gamp", iterations=it, diverged=diverged)


def _check_k(K, N):
    if int(K) != K or not 0 <= K <= N:
        raise ValueError(f"sparsity K must be an integer in [0, {N}], got {K}")
    return int(K)


def _support_to_binary(support, N, method, iterations):
    s = np.zeros(N, dtype=np.int8)
    s[np.asarray(sorted(support), dtype=int)] = 1
    return SparseEstimate(s_hat=s, s_posterior=s.astype(float), method=method, iterations=iterations)


def omp_recover(obs: SparseObservation, K: int) -> SparseEstimate:
    """Orthogonal matching pursuit with ``K`` atoms; the chosen support becomes ones."""
    A = obs.A
    M, N = A.shape
    K = _check_k(K, N)
    y = obs.y
    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0] = np.inf
    support: list[int] = []
    r = y.copy()
    for _ in range(K):
        corr = np.abs(A.conj().T @ r) / norms
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        coef, *_ = np.linalg.lstsq(A[:, support], y, rcond=None)
        r = y - A[:, support] @ coef
    return _support_to_binary(support, N, "omp", K)


def cosamp_recover(obs: SparseObservation, K: int, max_iter: int = 50, tol: float = 1e-10) -> SparseEstimate:
    """CoSaMP with support size ``K``; stops when the residual stalls."""
    A = obs.A
    M, N = A.shape
    K = _check_k(K, N)
    if K == 0:
        return _support_to_binary([], N, "cosamp", 0)
    y = obs.y
    s = np.zeros(N, dtype=complex)
    r = y.copy()
    res_prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        proxy = np.abs(A.conj().T @ r)
        omega = np.argsort(-proxy, kind="stable")[: 2 * K]
        T = np.union1d(omega, np.flatnonzero(s))
        b, *_ = np.linalg.lstsq(A[:, T], y, rcond=None)
        keep = T[np.argsort(-np.abs(b), kind="stable")[:K]]
        s = np.zeros(N, dtype=complex)
        s[keep] = b[np.searchsorted(T, keep)]
        r = y - A @ s
        res = np.linalg.norm(r)
        if res <= tol * max(np.linalg.norm(y), 1e-300) or res >= res_prev * (1 - 1e-6):
            break
        res_prev = res
    return _support_to_binary(np.flatnonzero(s), N, "cosamp", it)


def lower_bound_x(Y, z_true, constellation: Constellation) -> np.ndarray:
    """Symbol decisions from a matched filter on the true ``z``."""
    z_true = np.asarray(z_true, dtype=complex)
    energy = np.vdot(z_true, z_true).real
    stat = z_true.conj() @ np.asarray(Y, dtype=complex)
    return demap(stat / energy if energy > 0 else stat, constellation)


def lower_bound_s(Y, x_true, cfg: SystemConfig, ch: ChannelState, rho: float = None, A=None,
                  max_iter: int = 50) -> SparseEstimate:
    """GAMP on the matched filter built from the true symbols."""
    obs = form_observation(Y, x_true, cfg, ch, A=A)
    est = gamp_recover(obs, cfg.rho if rho is None else rho, max_iter=max_iter)
    est.method = "lb"
    return est
