"""First receiver step: rank-one factorization ``Y ~ z x^T`` and symbol decisions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ChannelState, Constellation, SystemConfig


class AmbiguityError(ValueError):
    """The pilot estimate is too small to resolve the scalar offset."""


@dataclass(eq=False)
class FactorResult:
    z_hat: np.ndarray
    x_hat: np.ndarray
    iterations: int = 0
    residual: float = np.nan
    diverged: bool = False


@dataclass(eq=False)
class FactorEstimate:
    z_hat: np.ndarray
    x_hat: np.ndarray
    gamma: complex
    x_tilde: np.ndarray
    iterations: int
    residual: float
    diverged: bool = False


@dataclass(frozen=True, eq=False)
class BigampPriors:
    """Gaussian prior on ``z`` and discrete uniform prior on ``x``.

    ``pilot`` (if given) pins slot 1 of ``x`` to a point mass.
    """

    z_mean: np.ndarray
    z_var: np.ndarray
    constellation: Constellation
    noise_var: float
    pilot: Optional[complex] = None

    @classmethod
    def from_model(cls, ch: ChannelState, A: np.ndarray, cfg: SystemConfig) -> "BigampPriors":
        """Moments of ``z_m = a_m^H s + h_d,m`` under Bernoulli(rho) states."""
        rho = cfg.rho
        z_mean = rho * A.sum(axis=1) + ch.h_d
        z_var = rho * (1 - rho) * np.sum(np.abs(A) ** 2, axis=1)
        return cls(z_mean, z_var, cfg.constellation, cfg.sigma_w2, cfg.reference_symbol)


def _frob_residual(Y, z_hat, x_hat) -> float:
    return float(np.linalg.norm(Y - np.outer(z_hat, x_hat)))


def factor_svd(Y) -> FactorResult:
    """Best rank-one approximation ``z_hat x_hat^T`` from the leading singular triple.

    With ``Y = U diag(lam) V^H`` the returned ``x_hat`` is ``conj(v_1)`` and
    ``z_hat = lam_1 u_1``. The global phase is fixed so the largest entry of
    ``x_hat`` is real positive.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 2:
        raise ValueError(f"Y must be a matrix, got shape {Y.shape}")
    if not np.any(Y):
        raise ValueError("Y is identically zero")
    U, lam, Vh = np.linalg.svd(Y, full_matrices=False)
    x_hat = Vh[0].copy()
    z_hat = lam[0] * U[:, 0]
    k = int(np.argmax(np.abs(x_hat)))
    ph = x_hat[k] / abs(x_hat[k])
    x_hat = x_hat / ph
    z_hat = z_hat * ph
    residual = float(np.sqrt(np.sum(lam[1:] ** 2)))
    return FactorResult(z_hat=z_hat, x_hat=x_hat, residual=residual)


def _discrete_posterior(r, nu_r, points):
    """Posterior mean/variance of a uniform discrete prior seen through CN(r, nu_r)."""
    d = np.abs(r[:, None] - points[None, :]) ** 2 / nu_r[:, None]
    d -= d.min(axis=1, keepdims=True)
    w = np.exp(-d)
    w /= w.sum(axis=1, keepdims=True)
    mean = w @ points
    var = w @ (np.abs(points) ** 2) - np.abs(mean) ** 2
    return mean, np.maximum(var, 0.0)


def factor_bigamp(
    Y,
    priors: BigampPriors,
    max_iter: int = 200,
    damping: float = 0.5,
    tol: float = 1e-8,
    adaptive: bool = False,
    rng: Optional[np.random.Generator] = None,
    restart: bool = True,
) -> FactorResult:
    """Rank-one bilinear generalized AMP with an AWGN output channel.

    Parameters
    ----------
    Y : (M, L) complex array
        Received block.
    priors : BigampPriors
        Gaussian prior on ``z``, uniform discrete prior on ``x``.
    max_iter : int
        Iteration cap.
    damping : float
        Fraction of the previous iterate kept when updating ``s_hat``, its
        variance, and the smoothed factors that feed the ``r``/``q`` steps.
    tol : float
        Stop when the relative change of ``z_hat x_hat^T`` drops below this.
    adaptive : bool
        If set, an iteration that increases ``||Y - z_hat x_hat^T||_F`` is
        rejected and the step ``1 - damping`` is halved; the run stops once
        the step falls below 1e-3. The residual is then non-increasing.
    rng : Generator, optional
        Only used for the symmetry-breaking start when the ``z`` prior mean
        is zero.
    restart : bool
        If a fixed-step run diverges, rerun once in adaptive mode before
        giving up. Near-noiseless blocks occasionally need this.

    Returns
    -------
    FactorResult
        ``diverged`` is set when the residual exceeds ten times its initial
        value or becomes non-finite.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 2:
        raise ValueError(f"Y must be a matrix, got shape {Y.shape}")
    M, L = Y.shape
    points = priors.constellation.points
    z_mean = np.asarray(priors.z_mean, dtype=complex)
    z_var = np.maximum(np.asarray(priors.z_var, dtype=float), 0.0)
    if z_mean.shape != (M,) or z_var.shape != (M,):
        raise ValueError("z prior moments must have length M")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    scale_y = np.mean(np.abs(Y) ** 2)
    nu_w = max(float(priors.noise_var), 1e-12 * max(scale_y, 1e-300))
    P = priors.constellation.average_power
    pinned = priors.pilot is not None

    a_hat = z_mean.copy()
    nu_a = z_var.copy()
    energy = np.vdot(z_mean, z_mean).real
    if energy > 0:
        # symbols start at their posterior given a matched filter on the z prior mean
        r0 = (z_mean.conj() @ Y) / energy
        nu_r0 = (nu_w * energy + P * np.sum(z_var * np.abs(z_mean) ** 2)) / energy**2 \
            + P * np.sum(z_var) / energy
        x_hat, nu_x = _discrete_posterior(r0, np.full(L, nu_r0), points)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        x_hat = np.full(L, np.mean(points), dtype=complex)
        x_hat += 1e-2 * np.sqrt(P / 2) * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
        nu_x = np.full(L, P)
    if pinned:
        x_hat[0] = priors.pilot
        nu_x[0] = 0.0

    step = 1.0 - damping
    s_hat = np.zeros((M, L), dtype=complex)
    nu_s = np.zeros((M, L))
    x_bar, a_bar = x_hat.copy(), a_hat.copy()
    res0 = _frob_residual(Y, a_hat, x_hat)
    res_prev = res0
    Z_prev = np.outer(a_hat, x_hat)
    diverged = False
    it = 0
    for it in range(1, max_iter + 1):
        saved = (x_hat, nu_x, a_hat, nu_a, s_hat, nu_s, x_bar, a_bar)
        w = 1.0 if it == 1 else step

        abs_a2 = np.abs(a_hat) ** 2
        abs_x2 = np.abs(x_hat) ** 2
        nu_p_bar = np.outer(abs_a2, nu_x) + np.outer(nu_a, abs_x2)
        nu_p = nu_p_bar + np.outer(nu_a, nu_x)
        p_hat = np.outer(a_hat, x_hat) - s_hat * nu_p_bar

        s_hat = (1 - w) * s_hat + w * (Y - p_hat) / (nu_p + nu_w)
        nu_s = (1 - w) * nu_s + w / (nu_p + nu_w)
        x_bar = (1 - w) * x_bar + w * x_hat
        a_bar = (1 - w) * a_bar + w * a_hat

        nu_r = 1.0 / np.maximum(np.abs(a_bar) ** 2 @ nu_s, 1e-300)
        r_hat = x_bar * (1.0 - nu_r * (nu_a @ nu_s)) + nu_r * (a_bar.conj() @ s_hat)
        nu_q = 1.0 / np.maximum(nu_s @ np.abs(x_bar) ** 2, 1e-300)
        q_hat = a_bar * (1.0 - nu_q * (nu_s @ nu_x)) + nu_q * (s_hat @ x_bar.conj())

        x_hat, nu_x = _discrete_posterior(r_hat, nu_r, points)
        if pinned:
            x_hat[0] = priors.pilot
            nu_x[0] = 0.0
        denom = z_var + nu_q
        with np.errstate(invalid="ignore", divide="ignore"):
            a_hat = np.where(denom > 0, (z_mean * nu_q + q_hat * z_var) / denom, z_mean)
            nu_a = np.where(denom > 0, z_var * nu_q / denom, 0.0)

        res = _frob_residual(Y, a_hat, x_hat)
        if not np.isfinite(res) or res > 10 * res0:
            diverged = True
            break
        if adaptive and res > res_prev:
            x_hat, nu_x, a_hat, nu_a, s_hat, nu_s, x_bar, a_bar = saved
            step /= 2
            if step < 1e-3:
                break
            continue
        res_prev = res

        Z = np.outer(a_hat, x_hat)
        change = np.linalg.norm(Z - Z_prev) / max(np.linalg.norm(Z), 1e-300)
        Z_prev = Z
        if change < tol:
            break

    if diverged and restart and not adaptive:
        retry = factor_bigamp(Y, priors, max_iter, damping, tol, adaptive=True, rng=rng, restart=False)
        retry.iterations += it
        return retry

    return FactorResult(
        z_hat=a_hat,
        x_hat=x_hat,
        iterations=it,
        residual=_frob_residual(Y, a_hat, x_hat),
        diverged=diverged,
    )


def correct_ambiguity(z_hat, x_hat, reference_symbol: complex):
    """Remove the scalar offset using the known pilot in slot 1.

    Returns ``(z_hat / gamma, gamma * x_hat, gamma)`` with ``gamma = x_1 / x_hat_1``.
    """
    z_hat = np.asarray(z_hat, dtype=complex)
    x_hat = np.asarray(x_hat, dtype=complex)
    if abs(x_hat[0]) < 1e-12:
        raise AmbiguityError("pilot estimate vanishes; scalar offset cannot be resolved")
    gamma = complex(reference_symbol) / x_hat[0]
    x_corr = gamma * x_hat
    x_corr[0] = reference_symbol
    return z_hat / gamma, x_corr, gamma


def demap(values, constellation: Constellation) -> np.ndarray:
    """Nearest constellation point per entry (ties go to the lower index)."""
    return constellation.points[constellation.nearest_index(values)]


def recover_symbols(Y, cfg: SystemConfig, method: str = "svd", priors: Optional[BigampPriors] = None,
                    **kwargs) -> FactorEstimate:
    """Factorize, correct the offset and demap; raises ``AmbiguityError`` on an erased block."""
    if method == "svd":
        fr = factor_svd(Y)
    elif method == "bigamp":
        if priors is None:
            raise ValueError("BiG-AMP needs priors")
        fr = factor_bigamp(Y, priors, **kwargs)
    else:
        raise ValueError(f"unknown factorization method {method!r}")
    z_corr, x_corr, gamma = correct_ambiguity(fr.z_hat, fr.x_hat, cfg.reference_symbol)
    x_tilde = demap(x_corr, cfg.constellation)
    return FactorEstimate(
        z_hat=z_corr,
        x_hat=x_corr,
        gamma=gamma,
        x_tilde=x_tilde,
        iterations=fr.iterations,
        residual=fr.residual,
        diverged=fr.diverged,
    )
