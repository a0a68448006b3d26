"""scikit-learn style wrappers around the functional API.

The estimators only hold hyper-parameters in ``__init__`` and learn
trailing-underscore attributes in ``fit``, so they work with ``clone``,
``get_params``/``set_params`` and pipelines. The data are complex, which
``sklearn.utils.check_array`` refuses, hence the local validators.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .beamforming import optimize_phases
from .factor import BigampPriors, correct_ambiguity, demap, factor_bigamp, factor_svd
from .model import ChannelState, Constellation, qpsk_gray
from .sparse import SparseObservation, cosamp_recover, gamp_recover, omp_recover


def check_complex_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if X.size == 0:
        raise ValueError(f"{name} is empty")
    X = X.astype(complex, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or inf")
    return X


def check_complex_vector(x, size: int = None, name: str = "x") -> np.ndarray:
    x = np.asarray(x).astype(complex, copy=False).ravel()
    if size is not None and x.size != size:
        raise ValueError(f"{name} must have length {size}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or inf")
    return x


class PhaseOptimizer(BaseEstimator):
    """Fit unit-modulus LIS phases to a channel realization."""

    def __init__(self, rho=0.5, beta=0.5, rounding_trials=100, tol=1e-6, max_iter=5000, random_state=0):
        self.rho = rho
        self.beta = beta
        self.rounding_trials = rounding_trials
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, channel: ChannelState, y=None):
        if not isinstance(channel, ChannelState):
            raise TypeError("PhaseOptimizer.fit expects a ChannelState")
        rng = np.random.default_rng(self.random_state)
        res = optimize_phases(channel, self.rho, self.beta, rng, trials=self.rounding_trials,
                              tol=self.tol, max_iter=self.max_iter)
        self.theta_ = res.theta
        self.expected_gain_ = res.expected_gain
        self.sdp_bound_ = res.sdp_bound
        self.n_iter_ = res.sdp.solver_iterations
        self.coefficient_matrix_ = channel.with_phases(res.theta, self.beta).A
        return self


class RankOneFactorizer(TransformerMixin, BaseEstimator):
    """Factor a received block ``Y ~ z x^T`` and decide the symbols.

    ``fit(Y)`` learns ``z_``, ``x_`` (offset-corrected) and ``symbols_``;
    ``transform(Y)`` refits and returns the decided symbols, one row per
    block when given a stack of blocks.
    """

    def __init__(self, method="svd", reference_symbol=None, constellation=None, z_mean=None,
                 z_var=None, noise_var=1.0, max_iter=200, damping=0.5, tol=1e-8):
        self.method = method
        self.reference_symbol = reference_symbol
        self.constellation = constellation
        self.z_mean = z_mean
        self.z_var = z_var
        self.noise_var = noise_var
        self.max_iter = max_iter
        self.damping = damping
        self.tol = tol

    def _constellation(self) -> Constellation:
        return self.constellation if self.constellation is not None else qpsk_gray(1.0)

    def fit(self, Y, y=None):
        Y = check_complex_matrix(Y, "Y")
        const = self._constellation()
        ref = const.point_for_label(0) if self.reference_symbol is None else complex(self.reference_symbol)
        if self.method == "svd":
            fr = factor_svd(Y)
        elif self.method == "bigamp":
            if self.z_mean is None or self.z_var is None:
                raise ValueError("BiG-AMP needs z_mean and z_var")
            priors = BigampPriors(check_complex_vector(self.z_mean, Y.shape[0], "z_mean"),
                                  np.asarray(self.z_var, dtype=float), const, self.noise_var, ref)
            fr = factor_bigamp(Y, priors, max_iter=self.max_iter, damping=self.damping, tol=self.tol)
        else:
            raise ValueError(f"method must be 'svd' or 'bigamp', got {self.method!r}")
        self.z_, self.x_, self.gamma_ = correct_ambiguity(fr.z_hat, fr.x_hat, ref)
        self.symbols_ = demap(self.x_, const)
        self.n_iter_ = fr.iterations
        self.residual_ = fr.residual
        self.diverged_ = fr.diverged
        return self

    def transform(self, Y):
        Y = np.asarray(Y)
        if Y.ndim == 3:
            return np.vstack([self.fit(block).symbols_ for block in Y])
        return self.fit(Y).symbols_


class BinaryStateRecovery(RegressorMixin, BaseEstimator):
    """Recover ``s in {0,1}^N`` from ``y = A s + w``.

    Mirrors ``sklearn.linear_model.OrthogonalMatchingPursuit``: ``fit(A, y)``
    takes the dictionary as ``X`` and stores the binary estimate in
    ``coef_``; ``predict(A)`` returns ``A @ coef_``.
    """

    def __init__(self, method="gamp", rho=0.5, noise_var=1.0, n_nonzero_coefs=None, max_iter=50, tol=1e-8):
        self.method = method
        self.rho = rho
        self.noise_var = noise_var
        self.n_nonzero_coefs = n_nonzero_coefs
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        A = check_complex_matrix(X, "A")
        y = check_complex_vector(y, A.shape[0], "y")
        obs = SparseObservation(z_tilde=y, w_var=float(self.noise_var), A=A, h_d=np.zeros(A.shape[0]))
        K = self.n_nonzero_coefs
        if K is None:
            K = int(round(self.rho * A.shape[1]))
        if self.method == "gamp":
            est = gamp_recover(obs, self.rho, max_iter=self.max_iter, tol=self.tol)
        elif self.method == "omp":
            est = omp_recover(obs, K)
        elif self.method == "cosamp":
            est = cosamp_recover(obs, K, max_iter=self.max_iter)
        else:
            raise ValueError(f"method must be 'gamp', 'omp' or 'cosamp', got {self.method!r}")
        self.coef_ = est.s_hat.astype(int)
        self.posterior_ = est.s_posterior
        self.n_iter_ = est.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        A = check_complex_matrix(X, "A")
        return A @ self.coef_

    def score(self, X, y, sample_weight=None):
        """Negative mean squared residual (complex data rule out R^2)."""
        resid = check_complex_vector(y) - self.predict(X)
        return -float(np.mean(np.abs(resid) ** 2))
