"""Helmholtz problem instances, the J0 reference evaluator and error metrics.

All field callables take an (n, 2) array of points and return (n,) values.
The operator is ``A u = -Lap u - kappa^2 b(x) u`` with Dirichlet data ``g``.
"""

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from ._validation import ParameterError

SOURCE_POINT = (-0.1, 0.5)
PULSE_WIDTH = 2000.0


def bessel_j0(z):
    """J0 by the periodic trapezoid rule on ``(1/pi) int_0^pi cos(z sin t) dt``.

    Each argument uses at least ``max(64, ceil(4 z))`` nodes, rounded up to a
    multiple of 64 so that a value never depends on which other arguments it
    was evaluated with.
    """
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)) or np.any(z_arr < 0) or np.any(z_arr > 1e6):
        raise ParameterError("bessel_j0 needs finite 0 <= z <= 1e6")
    flat = z_arr.reshape(-1)
    m = np.maximum(64, np.ceil(4.0 * flat)).astype(np.int64)
    m = 64 * ((m + 63) // 64)
    out = np.empty_like(flat)
    for mm in np.unique(m):
        idx = np.flatnonzero(m == mm)
        s = np.sin(np.pi * np.arange(mm) / mm)
        step = max(1, int(4_000_000 // mm))
        for lo in range(0, idx.size, step):
            chunk = idx[lo:lo + step]
            out[chunk] = np.cos(flat[chunk, None] * s[None, :]).mean(axis=1)
    out = out.reshape(z_arr.shape)
    return float(out) if out.ndim == 0 else out


def _j0_series(z, terms=20):
    # Maclaurin series; accurate only for modest z. Used as a test oracle.
    total, term = 0.0, 1.0
    q = (z / 2.0) ** 2
    for k in range(terms + 1):
        if k:
            term *= -q / (k * k)
        total += term
    return total


@dataclass(frozen=True)
class ProblemSpec:
    kappa: float
    b_field: Callable
    dirichlet_g: Callable
    body_load_f: Callable
    true_solution: Optional[Callable] = None
    name: str = "custom"


@dataclass(frozen=True)
class ErrorReport:
    relerr_res: float
    relerr_true: Optional[float] = None


def _ones(X):
    return np.ones(np.asarray(X).shape[0])


def _zeros(X):
    return np.zeros(np.asarray(X).shape[0])


def _check_kappa(kappa):
    if not np.isfinite(kappa) or kappa <= 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    return float(kappa)


def check_b_field(b_field, n=1000, domain=(0.0, 1.0, 0.0, 1.0)):
    """Sample ``b`` at quasi-random points and reject values outside [0, 1]."""
    from scipy.stats import qmc

    pts = qmc.Halton(d=2, scramble=False).random(n + 1)[1:]
    x0, x1, y0, y1 = domain
    pts = np.column_stack([x0 + (x1 - x0) * pts[:, 0], y0 + (y1 - y0) * pts[:, 1]])
    vals = np.asarray(b_field(pts), dtype=float)
    if vals.min() < 0.0 or vals.max() > 1.0 + 1e-12:
        raise ParameterError(f"b(x) range [{vals.min():.3g}, {vals.max():.3g}] outside [0, 1]")


class _BesselField:
    def __init__(self, kappa, source=SOURCE_POINT):
        self.kappa = kappa
        self.source = np.asarray(source, dtype=float)

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        r = np.hypot(X[:, 0] - self.source[0], X[:, 1] - self.source[1])
        return bessel_j0(self.kappa * r)


def make_analytic_helmholtz(kappa):
    """Constant-coefficient problem whose solution is ``J0(kappa |x - (-0.1, 0.5)|)``."""
    kappa = _check_kappa(kappa)
    u = _BesselField(kappa)
    return ProblemSpec(kappa=kappa, b_field=_ones, dirichlet_g=u, body_load_f=_zeros,
                       true_solution=u, name="analytic-helmholtz")


def gaussian_pulse(X):
    X = np.asarray(X, dtype=float)
    out = np.exp(-PULSE_WIDTH * (X[:, 1] - 0.5) ** 2)
    return np.where(X[:, 0] == 0.0, out, 0.0)


def make_gaussian_pulse_scattering(kappa, b_field=_ones):
    """Pulse on the left edge ``x = 0``, homogeneous data elsewhere, no body load."""
    kappa = _check_kappa(kappa)
    check_b_field(b_field)
    return ProblemSpec(kappa=kappa, b_field=b_field, dirichlet_g=gaussian_pulse,
                       body_load_f=_zeros, name="pulse")


class CrystalField:
    """Lattice of Gaussian wells in an otherwise uniform medium.

    ``b = clip(1 - sum_i depth * exp(-|x - c_i|^2 / sigma^2), 0, 1)`` with an
    ``n x n`` lattice of spacing ``spacing`` whose odd rows are shifted by
    half a spacing. The lattice is centred on ``center``.
    """

    def __init__(self, depth=0.9, sigma=0.02, n=6, spacing=0.08, center=(0.5, 0.5)):
        self.depth = float(depth)
        self.sigma = float(sigma)
        self.n = int(n)
        self.spacing = float(spacing)
        self.center = tuple(center)
        j, i = np.meshgrid(np.arange(self.n), np.arange(self.n), indexing="ij")
        half = (self.n - 1) * self.spacing / 2.0
        xs = self.center[0] - half - self.spacing / 4.0 + self.spacing * (i + 0.5 * (j % 2))
        ys = self.center[1] - half + self.spacing * j
        self.centers = np.column_stack([xs.ravel(), ys.ravel()])

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        out = np.ones(X.shape[0])
        s2 = self.sigma ** 2
        for lo in range(0, X.shape[0], 65536):
            P = X[lo:lo + 65536]
            d2 = ((P[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
            out[lo:lo + 65536] -= self.depth * np.exp(-d2 / s2).sum(axis=1)
        return np.clip(out, 0.0, 1.0)


def crystal_field(**overrides):
    return CrystalField(**overrides)


PRESETS = ("analytic-helmholtz", "pulse-crystal", "pulse-constant")


def make_preset(name, kappa, **b_params):
    if name == "analytic-helmholtz":
        return make_analytic_helmholtz(kappa)
    if name == "pulse-crystal":
        spec = make_gaussian_pulse_scattering(kappa, crystal_field(**b_params))
        return replace(spec, name=name)
    if name == "pulse-constant":
        spec = make_gaussian_pulse_scattering(kappa)
        return replace(spec, name=name)
    raise ParameterError(f"unknown preset {name!r}; choose from {PRESETS}")


def compute_errors(spec, u_calc, A_apply, f_vec, coords=None):
    """Relative residual of the full discrete system and, if known, the true error.

    ``A_apply`` applies the full-grid operator (identity rows on Dirichlet
    nodes) and ``f_vec`` is its right-hand side, carrying ``g`` on those rows.
    ``coords`` are the collocation points, needed only for the true error.
    """
    u_calc = np.asarray(u_calc, dtype=float)
    f_vec = np.asarray(f_vec, dtype=float)
    fnorm = np.linalg.norm(f_vec)
    if fnorm == 0.0:
        raise ZeroDivisionError("||f|| = 0: relative residual undefined")
    relerr_res = float(np.linalg.norm(A_apply(u_calc) - f_vec) / fnorm)
    relerr_true = None
    if spec.true_solution is not None:
        if coords is None:
            raise ParameterError("coords are required to evaluate the true error")
        u_true = spec.true_solution(coords)
        relerr_true = float(np.linalg.norm(u_calc - u_true) / np.linalg.norm(u_true))
    return ErrorReport(relerr_res=relerr_res, relerr_true=relerr_true)
