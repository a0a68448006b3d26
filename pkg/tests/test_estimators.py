import numpy as np
import pytest
from sklearn.base import clone

from pbit.beamforming import expected_gain
from pbit.estimators import (
    BinaryStateRecovery,
    PhaseOptimizer,
    RankOneFactorizer,
    check_complex_matrix,
    check_complex_vector,
)
from pbit.factor import BigampPriors
from pbit.model import SystemConfig, make_rng, modulate, random_bits, random_phases, sample_channels


def _problem(cfg, seed):
    rng = make_rng(seed)
    ch = sample_channels(cfg, rng)
    chA = ch.with_phases(random_phases(cfg.N, rng).theta, cfg.beta)
    s = (rng.random(cfg.N) < cfg.rho).astype(int)
    x = modulate(random_bits(cfg, rng), cfg)
    return chA, s, x, rng


def test_validators():
    with pytest.raises(ValueError):
        check_complex_matrix(np.ones(3))
    with pytest.raises(ValueError):
        check_complex_matrix(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        check_complex_matrix(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        check_complex_vector(np.ones(3), size=4)
    assert check_complex_matrix([[1, 2]]).dtype == complex


def test_params_and_clone():
    est = BinaryStateRecovery(method="omp", rho=0.7)
    assert est.get_params()["method"] == "omp"
    twin = clone(est).set_params(rho=0.2)
    assert twin.rho == 0.2 and est.rho == 0.7
    assert PhaseOptimizer().get_params()["rounding_trials"] == 100


def test_phase_optimizer_fit():
    cfg = SystemConfig(M=8, N=8)
    ch = sample_channels(cfg, make_rng(0))
    po = PhaseOptimizer(rounding_trials=20).fit(ch)
    np.testing.assert_allclose(np.abs(po.theta_), 1.0)
    assert po.expected_gain_ == pytest.approx(expected_gain(po.theta_, ch, 0.5, 0.5))
    assert po.expected_gain_ <= po.sdp_bound_ + 1e-9
    assert po.coefficient_matrix_.shape == (8, 8)
    with pytest.raises(TypeError):
        PhaseOptimizer().fit(np.ones((2, 2)))


@pytest.mark.parametrize("method", ["svd", "bigamp"])
def test_factorizer_noiseless(method):
    cfg = SystemConfig(sigma_w2=0.0)
    chA, s, x, _ = _problem(cfg, 1)
    z = chA.A @ s + chA.h_d
    pr = BigampPriors.from_model(chA, chA.A, cfg)
    est = RankOneFactorizer(method=method, z_mean=pr.z_mean, z_var=pr.z_var, noise_var=0.0)
    np.testing.assert_array_equal(est.fit(np.outer(z, x)).symbols_, x)
    np.testing.assert_allclose(np.outer(est.z_, est.x_), np.outer(z, x), atol=1e-8)
    stacked = est.transform(np.stack([np.outer(z, x)] * 2))
    assert stacked.shape == (2, cfg.L)


def test_factorizer_errors():
    with pytest.raises(ValueError):
        RankOneFactorizer(method="bigamp").fit(np.ones((2, 3)))
    with pytest.raises(ValueError):
        RankOneFactorizer(method="pca").fit(np.ones((2, 3)))


@pytest.mark.parametrize("method", ["gamp", "omp", "cosamp"])
def test_state_recovery(method):
    cfg = SystemConfig(M=64, N=16, rho=0.5)
    chA, s, _, rng = _problem(cfg, 2)
    s = np.zeros(16, int)
    s[:8] = 1
    y = chA.A @ s + 1e-4 * rng.standard_normal(64)
    est = BinaryStateRecovery(method=method, noise_var=1e-6, n_nonzero_coefs=8).fit(chA.A, y)
    np.testing.assert_array_equal(est.coef_, s)
    np.testing.assert_allclose(est.predict(chA.A), chA.A @ s)
    assert est.score(chA.A, y) > -1e-6
    assert np.all((est.posterior_ >= 0) & (est.posterior_ <= 1))


def test_state_recovery_unfitted_and_bad_method():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        BinaryStateRecovery().predict(np.ones((2, 2)))
    with pytest.raises(ValueError):
        BinaryStateRecovery(method="lasso").fit(np.ones((2, 2)), np.ones(2))
