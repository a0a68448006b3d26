import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbit.beamforming import (
    build_qcqp,
    expected_gain,
    homogeneous_objective,
    load_phases,
    optimize_phases,
    randomized_rounding,
    save_phases,
    solve_sdp,
)
from pbit.model import ChannelState, PhaseShifts, SystemConfig, make_rng, random_phases, sample_channels


def _instance(M, N, seed):
    return sample_channels(SystemConfig(M=M, N=N), make_rng(seed))


def _enumerated_gain(theta, ch, rho, beta):
    """Sum over all 2^N states of p(s) ||A s + h_d||^2."""
    A = ch.with_phases(theta, beta).A
    N = ch.N
    total = 0.0
    for bits in itertools.product((0, 1), repeat=N):
        s = np.array(bits, dtype=float)
        k = s.sum()
        total += rho**k * (1 - rho) ** (N - k) * np.linalg.norm(A @ s + ch.h_d) ** 2
    return total


def _random_hermitian(n, rng):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return X + X.conj().T


# --- expected gain ---------------------------------------------------------------


def test_gain_rho_zero_is_direct_energy():
    ch = _instance(5, 4, 0)
    theta = random_phases(4, make_rng(1)).theta
    assert expected_gain(theta, ch, 0.0, 0.5) == pytest.approx(np.linalg.norm(ch.h_d) ** 2)


@pytest.mark.parametrize("rho", [0.0, 0.25, 0.5, 1.0])
def test_gain_scalar_case(rho):
    ch = ChannelState(np.ones((1, 1)), np.ones(1), np.ones(1))
    assert expected_gain(np.ones(1), ch, rho, 1.0) == pytest.approx(1 + 3 * rho)


@pytest.mark.parametrize("N", [1, 3, 6, 9, 12])
@pytest.mark.parametrize("rho", [0.3, 0.5, 0.9])
def test_gain_matches_enumeration(N, rho):
    ch = _instance(4, N, 10 + N)
    theta = random_phases(N, make_rng(N)).theta
    exact = _enumerated_gain(theta, ch, rho, 0.7)
    assert abs(expected_gain(theta, ch, rho, 0.7) - exact) <= 1e-9 * max(1.0, exact)


def test_gain_matches_monte_carlo():
    ch = _instance(6, 8, 3)
    theta = random_phases(8, make_rng(4)).theta
    A = ch.with_phases(theta, 0.5).A
    rng = make_rng(5)
    S = (rng.random((100_000, 8)) < 0.5).astype(float)
    e = np.linalg.norm(S @ A.T + ch.h_d, axis=1) ** 2
    se = e.std(ddof=1) / np.sqrt(e.size)
    assert abs(expected_gain(theta, ch, 0.5, 0.5) - e.mean()) < 3 * se


def test_gain_rejects_bad_phases():
    ch = _instance(2, 3, 0)
    with pytest.raises(ValueError):
        expected_gain(np.ones(2), ch, 0.5, 0.5)
    with pytest.raises(ValueError):
        expected_gain(np.array([1, 1, 0.5]), ch, 0.5, 0.5)


# --- QCQP --------------------------------------------------------------------------


def test_qcqp_structure():
    ch = _instance(4, 5, 2)
    q = build_qcqp(ch, 0.6, 0.5)
    np.testing.assert_allclose(q.R, q.R.conj().T)
    assert q.R[-1, -1] == 0 and q.V[-1, -1] == 0
    np.testing.assert_allclose(q.V, np.diag(np.diag(q.V)))
    np.testing.assert_allclose(np.diag(q.V)[:-1].real, 0.6 * 0.4 * q.v)
    B = 0.5 * ch.G @ ch.D_h
    np.testing.assert_allclose(q.v, np.diag(B.conj().T @ B).real)


def test_qcqp_rho_zero_and_no_direct_link():
    ch = _instance(3, 4, 1)
    q = build_qcqp(ch, 0.0, 0.5)
    assert not np.any(q.R) and not np.any(q.V)
    ch0 = ChannelState(ch.G, ch.h_r, np.zeros(3))
    q0 = build_qcqp(ch0, 0.5, 0.5)
    assert not np.any(q0.R[-1]) and not np.any(q0.R[:, -1])


def test_qcqp_consistent_with_gain():
    ch = _instance(5, 7, 3)
    q = build_qcqp(ch, 0.4, 0.8)
    rng = make_rng(6)
    hd2 = np.linalg.norm(ch.h_d) ** 2
    for _ in range(100):
        p = random_phases(7, rng)
        assert homogeneous_objective(p.theta_bar, q) + hd2 == pytest.approx(
            expected_gain(p, ch, 0.4, 0.8), rel=1e-12
        )


# --- SDP -----------------------------------------------------------------------------


def test_sdp_identity():
    sol = solve_sdp(np.eye(5))
    assert sol.objective == pytest.approx(5.0, abs=1e-6)
    assert sol.upper_bound == pytest.approx(5.0, abs=1e-5)


def test_sdp_scalar_grid_oracle():
    c = 0.3 - 1.1j
    C = np.array([[1.0, c], [np.conj(c), 0.0]])
    sol = solve_sdp(C)
    grid = np.exp(1j * 2 * np.pi * np.arange(3600) / 3600)
    vals = 1 + 2 * np.real(np.conj(grid) * c)
    assert sol.objective == pytest.approx(1 + 2 * abs(c), abs=1e-6)
    assert sol.upper_bound >= vals.max() - 1e-9


def test_sdp_bounds_sampled_feasible_points():
    rng = make_rng(7)
    C = _random_hermitian(5, rng)
    sol = solve_sdp(C)
    best = -np.inf
    for _ in range(10):
        t = np.exp(1j * rng.uniform(0, 2 * np.pi, (100_000, 5)))
        best = max(best, np.max(np.real(np.einsum("ti,ij,tj->t", t.conj(), C, t))))
    assert sol.objective >= best - 1e-6
    assert sol.upper_bound >= sol.objective


@pytest.mark.parametrize("n", [2, 9, 17, 33, 65])
def test_sdp_converges_and_is_feasible(n):
    C = _random_hermitian(n, make_rng(100 + n))
    sol = solve_sdp(C)
    assert sol.converged
    assert max(sol.residuals) < 1e-6
    assert np.linalg.eigvalsh(sol.Q)[0] >= -1e-7
    np.testing.assert_allclose(np.diag(sol.Q).real, 1.0, atol=1e-6)
    assert sol.gap <= 1e-5 * max(1.0, abs(sol.upper_bound))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31))
def test_sdp_residual_property(n, seed):
    C = _random_hermitian(n, np.random.default_rng(seed))
    sol = solve_sdp(C)
    assert sol.converged and max(sol.residuals) < 1e-6


def test_sdp_full_scale_problem():
    q = build_qcqp(_instance(32, 32, 0), 0.5, 0.5)
    sol = solve_sdp(q)
    assert sol.converged
    assert sol.objective <= sol.upper_bound


def test_sdp_rejects_non_hermitian_and_flags_iteration_cap():
    with pytest.raises(ValueError):
        solve_sdp(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        solve_sdp(np.ones((2, 3)))
    sol = solve_sdp(_random_hermitian(20, make_rng(1)), max_iter=3)
    assert not sol.converged and sol.solver_iterations == 3
    assert np.all(np.isfinite(sol.residuals))


# --- rounding -------------------------------------------------------------------------


def test_rounding_rank_one_certificate():
    ch = _instance(4, 6, 9)
    q = build_qcqp(ch, 0.5, 0.5)
    tb = np.append(np.exp(1j * make_rng(2).uniform(0, 2 * np.pi, 6)), 1.0) * np.exp(0.7j)
    Q = np.outer(tb, tb.conj())
    p = randomized_rounding(Q, 5, q, make_rng(3))
    ratio = p.theta / (tb[:-1] / tb[-1])
    np.testing.assert_allclose(ratio, 1.0, atol=1e-9)
    scale = np.abs(q.C).sum()
    assert homogeneous_objective(p.theta_bar, q) == pytest.approx(np.real(np.vdot(q.C, Q)), abs=1e-9 * scale)


def test_rounding_scalar_grid_optimum():
    rng = make_rng(4)
    grid = np.exp(1j * 2 * np.pi * np.arange(3600) / 3600)
    for _ in range(10):
        ch = _instance(3, 1, int(rng.integers(1 << 30)))
        q = build_qcqp(ch, 0.5, 0.5)
        sol = solve_sdp(q)
        p = randomized_rounding(sol, 100, q, rng)
        vals = [homogeneous_objective(np.array([g, 1.0]), q) for g in grid]
        got = homogeneous_objective(p.theta_bar, q)
        assert got >= max(vals) - 1e-6
        assert got <= sol.upper_bound + 1e-9


def test_rounding_unit_modulus_and_bound():
    ch = _instance(8, 10, 5)
    q = build_qcqp(ch, 0.5, 0.5)
    sol = solve_sdp(q)
    p = randomized_rounding(sol, 50, q, make_rng(0))
    np.testing.assert_allclose(np.abs(p.theta), 1.0, atol=1e-12)
    assert homogeneous_objective(p.theta_bar, q) <= sol.upper_bound


def test_rounding_more_trials_never_worse():
    ch = _instance(8, 10, 6)
    q = build_qcqp(ch, 0.5, 0.5)
    sol = solve_sdp(q)
    vals = [homogeneous_objective(randomized_rounding(sol, t, q, make_rng(11)).theta_bar, q)
            for t in (1, 5, 20, 100)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_rounding_rejects_zero_trials():
    q = build_qcqp(_instance(2, 2, 0), 0.5, 0.5)
    with pytest.raises(ValueError):
        randomized_rounding(np.eye(3), 0, q, make_rng(0))


# --- end-to-end -----------------------------------------------------------------------


def test_single_antenna_cophasing_optimum():
    ch = ChannelState(*(_instance(1, 6, 8).G, _instance(1, 6, 8).h_r, np.zeros(1)))
    res = optimize_phases(ch, 1.0, 1.0, make_rng(0))
    g = ch.G[0] * ch.h_r
    assert res.expected_gain == pytest.approx(np.sum(np.abs(g)) ** 2, rel=1e-6)
    # co-phased: every term g_n theta_n shares one phase
    terms = g * res.theta
    np.testing.assert_allclose(np.angle(terms / terms[0]), 0.0, atol=1e-3)


def test_optimized_dominates_random_mean():
    rng = make_rng(9)
    for seed in range(5):
        ch = _instance(8, 8, 50 + seed)
        res = optimize_phases(ch, 0.5, 0.5, make_rng(seed))
        base = np.mean([expected_gain(random_phases(8, rng), ch, 0.5, 0.5) for _ in range(1000)])
        assert res.expected_gain >= base
        assert res.expected_gain <= res.sdp_bound + 1e-9


def test_relaxation_sandwich():
    ch = _instance(6, 5, 12)
    q = build_qcqp(ch, 0.7, 0.5)
    res = optimize_phases(ch, 0.7, 0.5, make_rng(1))
    hd2 = np.linalg.norm(ch.h_d) ** 2
    assert res.expected_gain - hd2 <= res.sdp.upper_bound + 1e-9
    rng = make_rng(2)
    for _ in range(200):
        tb = random_phases(5, rng).theta_bar
        assert homogeneous_objective(tb, q) <= res.sdp.upper_bound + 1e-9


def test_phase_file_round_trip(tmp_path):
    p = random_phases(7, make_rng(0))
    path = tmp_path / "theta.txt"
    save_phases(p, path)
    lines = path.read_text().split()
    assert len(lines) == 7
    back = load_phases(path)
    np.testing.assert_allclose(back.theta, p.theta, atol=1e-11)
