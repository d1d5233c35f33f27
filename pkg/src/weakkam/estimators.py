"""scikit-learn style wrappers around the solvers.

These follow the estimator conventions (constructor stores parameters,
``fit`` returns ``self``, learned state ends in an underscore) so they can
be cloned, inspected with ``get_params`` and dropped into pipelines.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_field_batch, check_points, check_series
from .barrier import barrier_slices, limit_solution, weak_kam_residual
from .exceptions import InsufficientData, ValidationError
from .grid import ValueField, interpolate
from .semigroup import SolverParams, evolve_batch, _lattice_index, loglinear_fit


class LaxOleinikTransformer(TransformerMixin, BaseEstimator):
    """Maps each row (a field on ``grid``) to its evolution over ``[t0, t0 + horizon]``."""

    def __init__(self, model, grid, horizon=1.0, t0=0.0, params=None, renormalize=False):
        self.model = model
        self.grid = grid
        self.horizon = horizon
        self.t0 = t0
        self.params = params
        self.renormalize = renormalize

    def fit(self, X=None, y=None):
        params = self.params or SolverParams.for_model(self.model, self.grid)
        params.validate(self.grid, self.model)
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        self.params_ = params
        self.k0_ = _lattice_index(self.t0, params.dt, "t0")
        self.n_steps_ = _lattice_index(self.horizon, params.dt, "horizon")
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_field_batch(X, self.grid)
        out, _ = evolve_batch(X, self.model, self.grid, self.params_, self.k0_, self.n_steps_)
        if self.renormalize:
            out = out - out.min(axis=1, keepdims=True)
        return out


class PeriodicWeakKAMSolution(BaseEstimator):
    """Periodic limit solution built from an initial field through barrier tables.

    ``predict`` takes rows ``(x..., t)`` with ``t`` on a slice time and
    interpolates the matching slice in space.
    """

    def __init__(self, model, grid, n_slices=8, tol_h=1e-3, params=None):
        self.model = model
        self.grid = grid
        self.n_slices = n_slices
        self.tol_h = tol_h
        self.params = params

    def fit(self, X=None, y=None):
        params = self.params or SolverParams.for_model(self.model, self.grid)
        u0 = np.zeros(self.grid.n_nodes) if X is None else check_field_batch(X, self.grid)[0]
        self.barriers_ = barrier_slices(self.model, self.grid, params, self.n_slices, tol_h=self.tol_h)
        self.solution_ = limit_solution(ValueField(self.grid, u0), self.barriers_)
        self.residual_ = weak_kam_residual(self.solution_, self.model, params)
        self.params_ = params
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = check_points(X, self.grid.dim)
        out = np.empty(len(X))
        for i, row in enumerate(X):
            out[i] = interpolate(self.solution_.at(row[-1]), row[:-1].reshape(1, -1))[0]
        return out


class ExponentialRateRegressor(RegressorMixin, BaseEstimator):
    """Fits ``gap ~ C exp(-rate n)`` on the epochs whose gap clears ``floor``."""

    def __init__(self, floor=0.0, scale=1.0, min_epochs=4):
        self.floor = floor
        self.scale = scale
        self.min_epochs = min_epochs

    def fit(self, X, y):
        n, gaps = check_series(X, y)
        cut = max(self.floor, 10.0 * np.finfo(float).eps * self.scale)
        keep = gaps > cut
        if keep.sum() < self.min_epochs:
            raise InsufficientData(f"{int(keep.sum())} usable epochs, need {self.min_epochs}",
                                   usable=int(keep.sum()), floor=cut)
        self.rate_, self.constant_, self.r_squared_ = loglinear_fit(n[keep], gaps[keep])
        self.used_ = n[keep]
        return self

    def predict(self, X):
        check_is_fitted(self, "rate_")
        n = np.asarray(X, dtype=float).ravel()
        return self.constant_ * np.exp(-self.rate_ * n)
