"""scikit-learn style wrappers around the filters.

Both estimators take observation records as a 2-D array ``X`` of shape
``(n_paths, k + 1)``: row ``i`` holds ``y(tau_0), ..., y(tau_k)`` on a uniform
grid of spacing ``dt`` with ``y(tau_0) = 0``.  ``fit`` performs everything that
does not depend on the observed values (for the spectral filter, the whole
offline stage) and ``predict`` returns the conditional-mean trajectories.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .ekf import ekf_run
from .hermite import build_basis
from .model import SensorModel, builtin_model
from .online import run_filter
from .propagator import build_table
from .sde import SamplePath, density_mode


def resolve_model(model) -> SensorModel:
    """Accept a builtin name, a dict of expression strings or a SensorModel."""
    if isinstance(model, SensorModel):
        return model
    if isinstance(model, str):
        return builtin_model(model)
    if isinstance(model, dict):
        return SensorModel.from_strings(**model)
    raise TypeError(f"cannot interpret {type(model).__name__} as a model")


def _check_records(X) -> np.ndarray:
    X = check_array(X, ensure_min_features=1, dtype=np.float64)
    if np.any(X[:, 0] != 0.0):
        raise ValueError("every observation record must start with y(0) = 0")
    return X


class _FilterBase(BaseEstimator):
    def _validate_for_predict(self, X) -> np.ndarray:
        check_is_fitted(self, "n_steps_")
        X = _check_records(X)
        if X.shape[1] != self.n_steps_ + 1:
            raise ValueError(f"fitted for {self.n_steps_ + 1} samples per record, got {X.shape[1]}")
        return X

    def predict(self, X) -> np.ndarray:
        """Conditional-mean trajectories, shape ``(n_paths, k + 1)``."""
        return self._moments(X)[0]

    def predict_variance(self, X) -> np.ndarray:
        return self._moments(X)[1]

    def transform(self, X) -> np.ndarray:
        """Means followed by variances, shape ``(n_paths, 2 (k + 1))``."""
        mean, var = self._moments(X)
        return np.hstack([mean, var])

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)

    def score(self, X, y) -> float:
        """Negative root-mean-square error of the mean against true states ``y``."""
        y = check_array(y, dtype=np.float64)
        pred = self.predict(X)
        if y.shape != pred.shape:
            raise ValueError(f"y has shape {y.shape}, expected {pred.shape}")
        return -float(np.sqrt(np.mean((pred - y) ** 2)))


class SpectralFilter(_FilterBase):
    """Spectral filter with an offline propagator table and online updates.

    Parameters
    ----------
    model : str, dict or SensorModel
        Builtin name, expression strings, or a model object.
    alpha, beta, n_order : Hermite basis scaling, shift and order.
    dt : observation spacing.
    substeps : offline integration substeps per interval.
    method : ``"expm"`` or ``"cn"`` for the offline integrator.
    split : ``"kfe"`` or ``"likelihood"`` (see :mod:`dmzfilter.propagator`).
    """

    def __init__(
        self,
        model="cubic",
        alpha=1.0,
        beta=0.0,
        n_order=40,
        dt=0.01,
        substeps=10,
        method="expm",
        split="kfe",
    ):
        self.model = model
        self.alpha = alpha
        self.beta = beta
        self.n_order = n_order
        self.dt = dt
        self.substeps = substeps
        self.method = method
        self.split = split

    def fit(self, X, y=None):
        """Build the basis and the propagator table for the horizon of ``X``."""
        X = _check_records(X)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.model_ = resolve_model(self.model)
        self.n_steps_ = X.shape[1] - 1
        self.basis_ = build_basis(self.alpha, self.beta, int(self.n_order))
        partition = self.dt * np.arange(self.n_steps_ + 1)
        if self.n_steps_ == 0:
            self.table_ = None
        else:
            self.table_ = build_table(self.model_, self.basis_, partition, self.substeps, self.method, self.split)
        return self

    def _moments(self, X):
        X = self._validate_for_predict(X)
        if self.table_ is None:
            raise ValueError("fitted on records with no observation intervals")
        means = np.empty_like(X)
        variances = np.empty_like(X)
        for i, row in enumerate(X):
            est = run_filter(self.model_, self.basis_, self.table_, row[1:])
            means[i] = [e.mean for e in est]
            variances[i] = [e.variance for e in est]
        return means, variances


class ExtendedKalmanFilter(_FilterBase):
    """Continuous-discrete EKF with finite-difference Jacobians.

    ``m0`` defaults to the mode of the model's initial density.
    """

    def __init__(self, model="cubic", dt=0.01, m0=None, p0=1.0):
        self.model = model
        self.dt = dt
        self.m0 = m0
        self.p0 = p0

    def fit(self, X, y=None):
        X = _check_records(X)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.p0 < 0:
            raise ValueError("p0 must be non-negative")
        self.model_ = resolve_model(self.model)
        self.n_steps_ = X.shape[1] - 1
        self.m0_ = density_mode(self.model_) if self.m0 is None else float(self.m0)
        return self

    def _moments(self, X):
        X = self._validate_for_predict(X)
        times = self.dt * np.arange(X.shape[1])
        means = np.empty_like(X)
        variances = np.empty_like(X)
        for i, row in enumerate(X):
            path = SamplePath(times, np.full_like(row, np.nan), row, 0)
            states = ekf_run(self.model_, path, self.m0_, self.p0)
            means[i] = [s.mean for s in states]
            variances[i] = [s.cov for s in states]
        return means, variances
