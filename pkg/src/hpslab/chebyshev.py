"""One-dimensional Chebyshev-Lobatto collocation primitives.

Nodes are stored in ascending order on [-1, 1]. Everything two-dimensional
in the package is built from these by tensor products.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import ParameterError

__all__ = [
    "ChebGrid1D",
    "DiffMatrix1D",
    "cheb_nodes",
    "cheb_diff_matrix",
    "scale_to_interval",
    "barycentric_weights",
    "barycentric_interp",
    "interp_matrix",
    "extrapolation_weights",
]

_INTERP_SLACK = 1e-12


@dataclass(frozen=True)
class ChebGrid1D:
    p: int
    nodes: np.ndarray

    def __post_init__(self):
        self.nodes.setflags(write=False)


@dataclass(frozen=True)
class DiffMatrix1D:
    p: int
    entries: np.ndarray

    def __post_init__(self):
        self.entries.setflags(write=False)

    def __matmul__(self, other):
        return self.entries @ other


def _lobatto(p):
    n = p - 1
    k = np.arange(p)
    # sin form keeps the set exactly antisymmetric with exact -1, 0, +1
    return np.sin(np.pi * (2 * k - n) / (2 * n))


def cheb_nodes(p, *, allow_small=False):
    """Return the ``p`` Chebyshev-Gauss-Lobatto points on [-1, 1], ascending.

    ``allow_small`` lifts the ``p >= 4`` restriction; it exists only so the
    node formula can be inspected for ``p = 2, 3``.
    """
    p = int(p)
    lower = 2 if allow_small else 4
    if p < lower:
        raise ParameterError(f"p must be >= {lower}, got {p}")
    return ChebGrid1D(p=p, nodes=_lobatto(p))


def barycentric_weights(p):
    """Analytic barycentric weights of the Lobatto set (1/2 at the ends, alternating)."""
    w = np.ones(p)
    w[0] = w[-1] = 0.5
    # ascending order flips every sign when p-1 is odd; the overall sign cancels
    w *= (-1.0) ** np.arange(p)
    return w


def cheb_diff_matrix(grid):
    """Spectral differentiation matrix on the grid's nodes.

    Off-diagonal entries are the closed form ``(w_j / w_i) / (x_i - x_j)``;
    each diagonal entry is the negated sum of its row so that constants are
    differentiated to zero in floating point.
    """
    x = grid.nodes
    p = grid.p
    w = barycentric_weights(p)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return DiffMatrix1D(p=p, entries=D)


def scale_to_interval(D, a):
    """Differentiation matrix for the nodes mapped affinely onto an interval of length ``a``."""
    if not np.isfinite(a) or a <= 0:
        raise ParameterError(f"interval length must be positive, got {a}")
    return DiffMatrix1D(p=D.p, entries=(2.0 / a) * D.entries)


def _bary_rows(x, w, t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    diff = t[:, None] - x[None, :]
    hit = diff == 0.0
    diff[hit] = 1.0
    L = w[None, :] / diff
    L /= L.sum(axis=1, keepdims=True)
    rows = np.nonzero(hit.any(axis=1))[0]
    if rows.size:
        L[rows] = hit[rows].astype(float)
    return L


def interp_matrix(grid, t):
    """Matrix mapping nodal samples to interpolant values at the points ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(np.abs(t) > 1.0 + _INTERP_SLACK) or not np.all(np.isfinite(t)):
        raise ParameterError("interpolation points must lie in [-1, 1]")
    return _bary_rows(grid.nodes, barycentric_weights(grid.p), np.clip(t, -1.0, 1.0))


def barycentric_interp(grid, samples, t):
    """Evaluate the degree ``p-1`` interpolant of ``samples`` at a scalar ``t``."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (grid.p,):
        raise ParameterError(f"expected {grid.p} samples, got shape {samples.shape}")
    return float(interp_matrix(grid, [t])[0] @ samples)


def extrapolation_weights(p):
    """Weights taking the ``p-2`` interior Lobatto samples to the endpoints.

    Returns an array of shape (2, p-2): row 0 gives the value at -1, row 1 the
    value at +1, of the degree ``p-3`` polynomial through the interior nodes.
    The interior Lobatto points are the zeros of U_{p-2}, whose barycentric
    weights are ``(-1)^k sin^2(theta_k)``.
    """
    x = cheb_nodes(p).nodes[1:-1]
    theta = np.pi * np.arange(1, p - 1) / (p - 1)
    w = (-1.0) ** np.arange(p - 2) * np.sin(theta) ** 2
    return _bary_rows(x, w, np.array([-1.0, 1.0]))
