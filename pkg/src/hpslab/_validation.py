"""Exceptions and small input-validation helpers shared across the package."""

import numpy as np
from sklearn.utils import check_array


class ParameterError(ValueError):
    """A parameter lies outside its admissible domain."""


class ResonanceError(np.linalg.LinAlgError):
    """Interior block of one or more leaves is numerically singular.

    Raised when kappa^2 sits at (or very near) a Dirichlet eigenvalue of an
    element interior. ``element_ids`` lists every offending element.
    """

    def __init__(self, element_ids, kappa=None, p=None):
        self.element_ids = list(element_ids)
        self.kappa = kappa
        self.p = p
        shown = self.element_ids[:10]
        more = "" if len(self.element_ids) <= 10 else f" (+{len(self.element_ids) - 10} more)"
        super().__init__(
            f"leaf interior block singular (local resonance) on elements {shown}{more}"
            f" [kappa={kappa}, p={p}]"
        )


class SingularBlockError(np.linalg.LinAlgError):
    """A diagonal block hit a pivot below threshold during a direct factorization."""

    def __init__(self, where, index, pivot, scale):
        self.where = where
        self.index = index
        super().__init__(
            f"singular {where} block {index}: |pivot| = {pivot:.3e} < threshold {scale:.3e}"
        )


class CapExceededError(ValueError):
    """Requested dense or global object exceeds the configured size cap."""


def check_positive_int(value, name, minimum=1):
    if isinstance(value, (bool, np.bool_)) or int(value) != value or value < minimum:
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_points(X):
    """Validate an (n, 2) array of evaluation points."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 2:
        raise ParameterError(f"points must have 2 columns, got {X.shape[1]}")
    return X


def min_abs_pivot(lu):
    return float(np.min(np.abs(np.diagonal(lu))))
