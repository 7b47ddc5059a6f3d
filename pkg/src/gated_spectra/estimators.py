"""scikit-learn style front ends.

``JacobianSpectrum`` learns the spectral support from per-neuron state
samples and scores eigenvalues against it; ``PhaseClassifier`` labels
``(a_h, a_r)`` points; ``MeanField`` fits steady-state correlations.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import mft, phase, spectral
from .errors import ParameterError
from .params import Arch, GatedNetParams

GRU_COLUMNS = ("z", "zprime", "r", "rprime", "h_prev", "y")
LSTM_COLUMNS = ("f", "fprime", "i", "iprime", "o", "oprime", "c", "c_prev", "y")


def as_complex_points(X) -> np.ndarray:
    """Accept complex arrays or real ``(n, 2)`` arrays of ``(re, im)``."""
    X = np.asarray(X)
    if np.iscomplexobj(X):
        return X.ravel()
    X = check_array(X, ensure_2d=True)
    if X.shape[1] != 2:
        raise ParameterError("real input must have exactly two columns (re, im)")
    return X[:, 0] + 1j * X[:, 1]


def samples_to_array(moments: spectral.SampleMoments) -> np.ndarray:
    cols = GRU_COLUMNS if moments.arch == Arch.GRU else LSTM_COLUMNS
    return np.column_stack([moments[c] for c in cols])


def _check_params(params):
    if not isinstance(params, GatedNetParams):
        raise ParameterError("params must be a GatedNetParams instance")
    if params.arch == Arch.VANILLA:
        raise ParameterError("spectral support needs a gated architecture")
    return params


class JacobianSpectrum(BaseEstimator):
    """Spectral support of the state-to-state Jacobian.

    ``fit(X)`` takes one row per neuron with columns
    ``(z, z', r, r', h_prev, y)`` (GRU) or
    ``(f, f', i, i', o, o', c, c_prev, y)`` (LSTM).
    ``bound`` selects the exact curve or, for the GRU, the ``"inner"`` /
    ``"outer"`` bounding curve.
    """

    def __init__(self, params=None, bound="exact", grid=600):
        self.params = params
        self.bound = bound
        self.grid = grid

    def fit(self, X, y=None):
        p = _check_params(self.params)
        if isinstance(X, spectral.SampleMoments):
            m = X
        else:
            cols = GRU_COLUMNS if p.arch == Arch.GRU else LSTM_COLUMNS
            X = check_array(X, ensure_min_samples=1)
            if X.shape[1] != len(cols):
                raise ParameterError(f"expected {len(cols)} columns {cols}, got {X.shape[1]}")
            d = dict(zip(cols, X.T))
            c_h = float(np.mean(d["h_prev"] ** 2)) if "h_prev" in d else 0.0
            m = spectral.SampleMoments(p.arch, d, spectral.Source.NETWORK, c_h)
        if self.bound not in ("exact", "inner", "outer"):
            raise ParameterError("bound must be 'exact', 'inner' or 'outer'")
        if p.arch == Arch.LSTM:
            if self.bound != "exact":
                raise ParameterError("bounding curves are defined for the GRU only")
            pred = spectral.lstm_boundary(m, p, self.grid)
        elif self.bound == "exact":
            pred = spectral.gru_boundary(m, p, self.grid)
        else:
            inner, outer = spectral.gru_bounding_curves(m, p, self.grid)
            pred = inner if self.bound == "inner" else outer
        self.moments_ = m
        self.prediction_ = pred
        self.radius_ = pred.radius
        self.rings_ = pred.rings
        self.n_features_in_ = len(GRU_COLUMNS if p.arch == Arch.GRU else LSTM_COLUMNS)
        return self

    def decision_function(self, X):
        """The boundary function: positive inside the support."""
        check_is_fitted(self, "prediction_")
        return np.asarray(self.prediction_.S(as_complex_points(X)), dtype=float)

    def predict(self, X):
        return self.decision_function(X) > 0

    def score(self, X, y=None):
        """Fraction of the given eigenvalues inside the fitted boundary polyline."""
        check_is_fitted(self, "prediction_")
        return float(self.prediction_.inside(as_complex_points(X)).mean())


class PhaseClassifier(ClassifierMixin, BaseEstimator):
    """Fixed-point region of ``(a_h, a_r)`` points (rows of ``X``)."""

    def __init__(self, beta=0.0, grid=200, b_z=0.0, b_r=0.0):
        self.beta = beta
        self.grid = grid
        self.b_z = b_z
        self.b_r = b_r

    def fit(self, X=None, y=None):
        self.classes_ = np.array([r.value for r in phase.Region])
        return self

    def _points(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X)
        if X.shape[1] != 2:
            raise ParameterError("X must have columns (a_h, a_r)")
        rest = {"b_z": self.b_z, "b_r": self.b_r}
        return [phase.classify(a, b, rest, self.beta, self.grid) for a, b in X]

    def predict(self, X):
        return np.array([p.region.value for p in self._points(X)])

    def predict_marginal(self, X):
        return np.array([p.marginal for p in self._points(X)])


class MeanField(BaseEstimator):
    """Steady-state correlations from single-site Monte Carlo (or fixed points).

    ``method="mc"`` runs the sampler; ``method="fixed_point"`` returns the
    nonzero GRU fixed point with the largest variance.
    """

    def __init__(self, params=None, method="mc", paths=20000, horizon=64, seed=0):
        self.params = params
        self.method = method
        self.paths = paths
        self.horizon = horizon
        self.seed = seed

    def fit(self, X=None, y=None):
        p = _check_params(self.params)
        if self.method == "mc":
            run = mft.single_site_mc_gru if p.arch == Arch.GRU else mft.single_site_mc_lstm
            self.correlations_ = run(p, paths=self.paths, horizon=self.horizon, seed=self.seed)
            self.moments_ = spectral.SampleMoments.from_correlation(self.correlations_, p)
        elif self.method == "fixed_point":
            if p.arch != Arch.GRU:
                raise ParameterError("fixed-point mean field is implemented for the GRU")
            sols = mft.gru_fp_solve(p)
            self.fixed_points_ = sols
            self.correlations_ = mft.fp_correlation_set(max(sols, key=lambda s: s.c_h), p)
            self.moments_ = None
        else:
            raise ParameterError("method must be 'mc' or 'fixed_point'")
        self.c_h_ = float(self.correlations_.c_h)
        return self

    def transform(self, X=None):
        """Per-sample state rows (MC only), in the column order ``JacobianSpectrum`` expects."""
        check_is_fitted(self, "correlations_")
        if self.moments_ is None:
            raise ParameterError("fixed-point fits carry no samples")
        return samples_to_array(self.moments_)
