"""Input checks shared by the estimator wrappers."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import ValidationError


def check_field_batch(X, grid):
    """Return ``X`` as a finite float array of shape ``(n_fields, n_nodes)``."""
    try:
        X = check_array(X, ensure_2d=False, dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != grid.n_nodes:
        raise ValidationError(f"expected {grid.n_nodes} values per field, got {X.shape[1]}")
    return X


def check_points(X, dim):
    """Return query points as ``(m, dim + 1)``: coordinates followed by a time."""
    try:
        X = check_array(X, dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if X.shape[1] != dim + 1:
        raise ValidationError(f"query rows need {dim} coordinates and a time")
    return X


def check_series(n, y):
    n = np.asarray(n, dtype=float).ravel()
    try:
        y = check_array(np.asarray(y, dtype=float).reshape(-1, 1), dtype=np.float64).ravel()
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if n.shape != y.shape:
        raise ValidationError("epochs and gaps must have the same length")
    return n, y
