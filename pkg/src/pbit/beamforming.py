"""Passive beamforming: average-gain objective and its semidefinite relaxation.

The phase vector maximizes ``E ||beta G Theta S h_r + h_d||^2`` over the
Bernoulli element states. The problem is homogenized with an auxiliary
unit-modulus variable, relaxed to an SDP over ``Q = theta_bar theta_bar^H``,
solved with ADMM, and rounded back to unit-modulus phases by Gaussian
randomization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .model import ChannelState, PhaseShifts, check_unit_modulus

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QcqpData:
    R: np.ndarray
    V: np.ndarray
    v: np.ndarray

    @property
    def C(self) -> np.ndarray:
        return self.R + self.V


@dataclass(eq=False)
class SdpSolution:
    Q: np.ndarray
    objective: float
    upper_bound: float
    solver_iterations: int
    residuals: tuple[float, float, float]
    converged: bool

    @property
    def gap(self) -> float:
        return self.upper_bound - self.objective


@dataclass(eq=False)
class BeamformingResult:
    phases: PhaseShifts
    expected_gain: float
    sdp_bound: float
    sdp: Optional[SdpSolution] = field(default=None, repr=False)

    @property
    def theta(self) -> np.ndarray:
        return self.phases.theta


def expected_gain(theta, ch: ChannelState, rho: float, beta: float) -> float:
    """Average received channel energy ``E ||A s + h_d||^2`` over ``s``.

    Closed form for i.i.d. Bernoulli(rho) states, with ``beta`` folded into
    the LIS-receiver channel.
    """
    if isinstance(theta, PhaseShifts):
        theta = theta.theta
    theta = check_unit_modulus(theta, ch.N)
    B = ch.cascade(beta)  # M x N
    a = B @ theta
    v = np.sum(np.abs(B) ** 2, axis=0)
    gain = (
        rho**2 * np.vdot(a, a).real
        + 2 * rho * np.vdot(a, ch.h_d).real
        + rho * (1 - rho) * np.sum(v * np.abs(theta) ** 2)
        + np.vdot(ch.h_d, ch.h_d).real
    )
    return float(gain)


def build_qcqp(ch: ChannelState, rho: float, beta: float) -> QcqpData:
    B = ch.cascade(beta)
    BhB = B.conj().T @ B
    Bhh = B.conj().T @ ch.h_d
    v = np.real(np.diag(BhB)).copy()
    n = ch.N
    R = np.zeros((n + 1, n + 1), dtype=complex)
    R[:n, :n] = rho**2 * BhB
    R[:n, n] = rho * Bhh
    R[n, :n] = rho * Bhh.conj()
    V = np.zeros((n + 1, n + 1), dtype=complex)
    V[np.arange(n), np.arange(n)] = rho * (1 - rho) * v
    return QcqpData(R=R, V=V, v=v)


def homogeneous_objective(theta_bar, q: QcqpData) -> float:
    theta_bar = np.asarray(theta_bar, dtype=complex)
    return float(np.vdot(theta_bar, q.C @ theta_bar).real)


def _psd_project(X: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(X)
    pos = w > 0
    Up = U[:, pos]
    return (Up * w[pos]) @ Up.conj().T


def _hermitian(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.conj().T)


def _dual_bound(C: np.ndarray, Z: np.ndarray) -> float:
    """Certified upper bound on ``max tr(CQ)`` from a near-optimal ``Z``.

    Any ``y`` with ``Diag(y) - C >= 0`` bounds the SDP by ``sum(y)``. The
    guess comes from complementary slackness and is shifted into the
    feasible set by the largest eigenvalue of ``C - Diag(y)``.
    """
    d = np.maximum(np.real(np.diag(Z)), 1e-300)
    y = np.real(np.einsum("ij,ji->i", C, Z)) / d
    lam = np.linalg.eigvalsh(C - np.diag(y))[-1]
    return float(np.sum(y) + C.shape[0] * max(lam, 0.0))


def _normalize_diag(Z: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.maximum(np.real(np.diag(Z)), 1e-300))
    Q = Z / np.outer(d, d)
    Q[np.diag_indices_from(Q)] = 1.0
    return Q


def solve_sdp(q: Union[QcqpData, np.ndarray], tol: float = 1e-6, max_iter: int = 5000) -> SdpSolution:
    """Solve ``max tr(C Q)  s.t.  Q >= 0, diag(Q) = 1`` by ADMM.

    Splits the problem into an affine copy ``X`` (unit diagonal) and a
    PSD copy ``Z``; the penalty is rebalanced from the primal and dual
    residuals. The returned ``Q`` is ``Z`` rescaled to an exactly unit
    diagonal, so it is always feasible; ``upper_bound`` is a dual
    certificate, and the run counts as converged once the relative
    residuals and the relative duality gap all drop below ``tol``.
    """
    C = q.C if isinstance(q, QcqpData) else np.asarray(q, dtype=complex)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"objective matrix must be square, got {C.shape}")
    if not np.allclose(C, C.conj().T, atol=1e-10 * max(1.0, np.abs(C).max())):
        raise ValueError("objective matrix must be Hermitian")
    C = _hermitian(C)
    n = C.shape[0]
    scale = max(np.linalg.norm(C, 2), 1e-300)
    Cs = C / scale
    idx = np.diag_indices(n)

    # warm start from the rank-one guess built on the top eigenvector
    w, U = np.linalg.eigh(Cs)
    u = U[:, -1]
    u = np.where(np.abs(u) > 1e-12, u / np.maximum(np.abs(u), 1e-300), 1.0)
    Z = np.outer(u, u.conj())
    Uscaled = np.zeros_like(Cs)
    mu = 1.0
    r_pri = r_dual = gap = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        X = Z - Uscaled + Cs / mu
        X[idx] = 1.0
        Z_old = Z
        Z = _psd_project(_hermitian(X + Uscaled))
        Uscaled = Uscaled + X - Z
        r_pri = np.linalg.norm(X - Z) / max(1.0, np.linalg.norm(Z))
        r_dual = mu * np.linalg.norm(Z - Z_old) / max(1.0, mu * np.linalg.norm(Uscaled))
        if r_pri < tol and r_dual < tol:
            lb = np.real(np.vdot(Cs, _normalize_diag(Z)))
            ub = _dual_bound(Cs, Z)
            gap = (ub - lb) / max(1.0, abs(ub))
            if gap < tol:
                converged = True
                break
        # rebalance sparingly; adjusting every step makes the residuals oscillate
        if it % 20 == 0:
            if r_pri > 3 * r_dual:
                mu *= 2.0
                Uscaled /= 2.0
            elif r_dual > 3 * r_pri:
                mu /= 2.0
                Uscaled *= 2.0

    Q = _normalize_diag(Z)
    objective = float(np.real(np.vdot(C, Q)))
    upper = _dual_bound(Cs, Z) * scale
    upper = max(upper, objective)
    gap = (upper - objective) / max(1.0, abs(upper))
    if not converged:
        log.warning("ADMM stopped after %d iterations (primal %.2e, dual %.2e, gap %.2e)",
                    it, r_pri, r_dual, gap)
    return SdpSolution(
        Q=Q,
        objective=objective,
        upper_bound=float(upper),
        solver_iterations=it,
        residuals=(float(r_pri), float(r_dual), float(gap)),
        converged=converged,
    )


def randomized_rounding(
    sol: Union[SdpSolution, np.ndarray],
    trials: int,
    q: QcqpData,
    rng: np.random.Generator,
) -> PhaseShifts:
    """Best of ``trials`` Gaussian draws from the SDP solution.

    Each draw ``U Sigma^(1/2) r`` is de-homogenized by its last entry and
    projected entrywise onto the unit circle.
    """
    Q = sol.Q if isinstance(sol, SdpSolution) else np.asarray(sol, dtype=complex)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = Q.shape[0] - 1
    w, U = np.linalg.eigh(_hermitian(Q))
    # eigenvalues at rounding-noise level would leak sqrt(eps) into the draws
    w = np.where(w > (n + 1) * np.finfo(float).eps * max(w[-1], 0.0), w, 0.0)
    F = U * np.sqrt(w)
    C = q.C

    cands = np.empty((n, trials), dtype=complex)
    filled = 0
    while filled < trials:
        # one (re, im) pair per entry, draw-major: a longer run extends a shorter one
        g = rng.standard_normal((trials - filled, n + 1, 2))
        draw = F @ (np.sqrt(0.5) * (g[..., 0] + 1j * g[..., 1])).T
        last = draw[n]
        ok = np.abs(last) > 1e-300
        draw = draw[:, ok]
        k = draw.shape[1]
        cands[:, filled : filled + k] = draw[:n] / draw[n]
        filled += k
    mag = np.abs(cands)
    cands = np.where(mag > 0, cands / np.where(mag > 0, mag, 1.0), 1.0)

    bar = np.vstack([cands, np.ones((1, trials))])
    values = np.real(np.einsum("it,ij,jt->t", bar.conj(), C, bar))
    best = int(np.argmax(values))  # first maximizer
    return PhaseShifts(cands[:, best])


def optimize_phases(
    ch: ChannelState,
    rho: float,
    beta: float,
    rng: np.random.Generator,
    trials: int = 100,
    tol: float = 1e-6,
    max_iter: int = 5000,
) -> BeamformingResult:
    """Build the QCQP, relax, solve and round."""
    q = build_qcqp(ch, rho, beta)
    sol = solve_sdp(q, tol=tol, max_iter=max_iter)
    phases = randomized_rounding(sol, trials, q, rng)
    const = expected_gain(phases, ch, rho, beta) - homogeneous_objective(phases.theta_bar, q)
    return BeamformingResult(
        phases=phases,
        expected_gain=expected_gain(phases, ch, rho, beta),
        sdp_bound=sol.upper_bound + const,
        sdp=sol,
    )


def save_phases(phases: Union[PhaseShifts, np.ndarray], path: Union[str, Path]) -> None:
    """One phase per line, radians, 12 significant digits."""
    theta = phases.theta if isinstance(phases, PhaseShifts) else np.asarray(phases)
    text = "\n".join(f"{a:.12g}" for a in np.angle(theta))
    Path(path).write_text(text + "\n")


def load_phases(path: Union[str, Path]) -> PhaseShifts:
    values = [float(t) for t in Path(path).read_text().split()]
    return PhaseShifts.from_angles(values)
