"""scikit-learn style wrappers around the projection, the Skorokhod map and
the occupation-measure estimators.

Hyperparameters are plain constructor arguments (so ``get_params`` and
``clone`` work); everything derived is built in ``fit`` and carries a
trailing underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .diffusion import DiffusionModel, simulate_path
from .ergodics import estimate_invariant_measure, occupation_histogram
from .geometry import build_cone, dual_description
from .skorokhod import apply_skorokhod_map, project_point
from .paths import PathGrid


class _ConeMixin:
    def _build_cone(self):
        normals = check_array(self.normals, ensure_min_samples=1)
        directions = check_array(self.directions, ensure_min_samples=1)
        self.cone_ = build_cone(normals, directions, K=self.lipschitz_K)
        self.gcone_ = dual_description(self.cone_)
        self.n_features_in_ = self.cone_.dimension

    def _check_X(self, X):
        check_is_fitted(self, "cone_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the cone has dimension {self.n_features_in_}")
        return X


class SkorokhodProjector(_ConeMixin, TransformerMixin, BaseEstimator):
    """Row-wise projection ``pi`` onto the cone ``G``."""

    def __init__(self, normals=None, directions=None, lipschitz_K=None):
        self.normals = normals
        self.directions = directions
        self.lipschitz_K = lipschitz_K

    def fit(self, X=None, y=None):
        self._build_cone()
        if X is not None:
            self._check_X(X)
        return self

    def transform(self, X):
        X = self._check_X(X)
        return np.array([project_point(row, self.cone_) for row in X])


class SkorokhodMapTransformer(_ConeMixin, TransformerMixin, BaseEstimator):
    """Treats ``X`` (one row per grid time) as the driving path ``psi`` and
    returns the constrained path ``phi``; the push of the last transform is
    kept in ``eta_``."""

    def __init__(self, normals=None, directions=None, lipschitz_K=None, dt=1.0):
        self.normals = normals
        self.directions = directions
        self.lipschitz_K = lipschitz_K
        self.dt = dt

    def fit(self, X=None, y=None):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self._build_cone()
        return self

    def transform(self, X):
        X = self._check_X(X)
        psi = PathGrid(np.arange(X.shape[0]) * float(self.dt), X)
        dec = apply_skorokhod_map(psi, self.cone_)
        self.eta_ = dec.eta
        return dec.phi


class OccupationMeasureEstimator(BaseEstimator):
    """Weighted histogram of states in a box; ``score_samples`` returns the
    histogram density (0 outside the box)."""

    def __init__(self, box=None, bins=20):
        self.box = box
        self.bins = bins

    def fit(self, X, y=None, sample_weight=None):
        X = check_array(X, dtype=float)
        w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if w.shape != (X.shape[0],) or np.any(w < 0):
            raise ValueError("sample_weight must be nonnegative with one entry per row")
        box = self.box
        if box is None:
            box = (X.min(axis=0), X.max(axis=0) + 1e-12)
        self.n_features_in_ = X.shape[1]
        self.histogram_ = occupation_histogram(X, w, box, self.bins)
        return self

    def score_samples(self, X):
        check_is_fitted(self, "histogram_")
        X = check_array(X, dtype=float)
        hist = self.histogram_
        dens = hist.density()
        out = np.zeros(X.shape[0])
        for r, x in enumerate(X):
            idx = []
            for a, e in enumerate(hist.edges):
                j = np.searchsorted(e, x[a], side="right") - 1
                if x[a] == e[-1]:
                    j = len(e) - 2
                if j < 0 or j >= len(e) - 1:
                    break
                idx.append(j)
            else:
                out[r] = dens[tuple(idx)]
        return out


class InvariantMeasureEstimator(BaseEstimator):
    """Constant-coefficient reflected diffusion; ``fit`` runs one long path
    and stores the occupation histogram and moments after ``burn_in``."""

    def __init__(
        self,
        normals=None,
        directions=None,
        drift=None,
        sigma=None,
        h=1e-2,
        horizon=100.0,
        burn_in=10.0,
        bins=20,
        box=None,
        seed=0,
    ):
        self.normals = normals
        self.directions = directions
        self.drift = drift
        self.sigma = sigma
        self.h = h
        self.horizon = horizon
        self.burn_in = burn_in
        self.bins = bins
        self.box = box
        self.seed = seed

    def fit(self, X=None, y=None):
        cone = build_cone(check_array(self.normals), check_array(self.directions))
        k = cone.dimension
        b = np.asarray(self.drift, dtype=float).reshape(-1)
        S = np.eye(k) if self.sigma is None else np.atleast_2d(np.asarray(self.sigma, dtype=float))
        model = DiffusionModel.constant(b, S)
        if X is not None:
            X = check_array(X, dtype=float)
            x0 = X[0]
        else:
            x0 = np.zeros(k)
        path = simulate_path(x0, model, cone, self.horizon, self.h, self.seed)
        box = self.box
        if box is None:
            box = (np.zeros(k), path.states.max(axis=0) + 1e-12)
        est = estimate_invariant_measure(
            model, cone, self.burn_in, self.horizon, self.h, self.bins, box, self.seed, path=path
        )
        self.cone_ = cone
        self.n_features_in_ = k
        self.histogram_ = est.histogram
        self.mean_ = est.mean
        self.second_moment_ = est.second_moment
        self.half_discrepancy_ = est.half_discrepancy
        return self

    def predict(self, X=None):
        """The estimated stationary mean, repeated per row of ``X``."""
        check_is_fitted(self, "mean_")
        n = 1 if X is None else check_array(X).shape[0]
        return np.tile(self.mean_, (n, 1))
