"""Dense reference solvers used to check every stage of the pipeline."""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from ._validation import CapExceededError, min_abs_pivot

DENSE_CAP = 20_000
PIVOT_RTOL = 1e-14


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(eq=False)
class DenseSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    cap: int = DENSE_CAP

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        n = self.matrix.shape[0]
        if self.matrix.ndim != 2 or self.matrix.shape[1] != n or self.rhs.shape != (n,):
            raise ValueError(f"incompatible shapes {self.matrix.shape} and {self.rhs.shape}")
        if n > self.cap:
            raise CapExceededError(f"dense system of size {n} exceeds cap {self.cap}")
        if not (np.all(np.isfinite(self.matrix)) and np.all(np.isfinite(self.rhs))):
            raise ValueError("dense system has non-finite entries")

    @property
    def n(self):
        return self.matrix.shape[0]


def densify(system, cap=DENSE_CAP):
    """Dense copy of a ``GlobalSparseSystem`` or ``ReducedSystem``."""
    A = system.matrix
    n = A.shape[0]
    if n > cap:
        raise CapExceededError(f"system of size {n} exceeds dense cap {cap}")
    dense = A.toarray() if sp.issparse(A) else np.array(A, dtype=float)
    return DenseSystem(matrix=dense, rhs=np.array(system.rhs, dtype=float), cap=cap)


def dense_factor(system):
    """Partially pivoted LU; refuses pivots below ``1e-14 * ||A||_inf``."""
    A = system.matrix
    with warnings.catch_warnings():
        # an exactly zero pivot is reported below with our own threshold
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(A, check_finite=False)
    scale = np.abs(A).sum(axis=1).max()
    pivot = min_abs_pivot(lu)
    if pivot < PIVOT_RTOL * scale:
        raise SingularMatrixError(f"pivot {pivot:.3e} below {PIVOT_RTOL:g} * ||A||_inf = {PIVOT_RTOL * scale:.3e}")
    return lu, piv


def dense_solve(system, factors=None):
    if system.n == 0:
        return np.zeros(0)
    if factors is None:
        factors = dense_factor(system)
    return lu_solve(factors, system.rhs, check_finite=False)


def residual_ratio(system, x):
    """``||A x - b|| / (||A|| ||x|| + ||b||)`` in the infinity norm."""
    A, b = system.matrix, system.rhs
    num = np.abs(A @ x - b).max() if b.size else 0.0
    den = np.abs(A).sum(axis=1).max() * np.abs(x).max() + np.abs(b).max() if b.size else 1.0
    return float(num / den) if den else float(num)
