"""Estimator-style wrapper: ``fit`` solves a problem, ``predict`` samples the solution."""

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .assembly import GlobalOperator, dirichlet_vector, global_rhs
from .bench import RunConfig, evaluate_field, solve_problem
from .mesh import MeshParams, build_mesh
from .problems import ProblemSpec, compute_errors, make_preset


class HPSSolver(BaseEstimator):
    """Direct spectral-element Helmholtz solver on the unit square.

    ``fit(problem)`` builds leaves, condenses, factors and solves. ``problem``
    is a :class:`ProblemSpec`, or ``None`` to use ``preset`` with the wavenumber
    derived from ``kappa``/``wavelengths``/``ppw`` as in :class:`RunConfig`.

    Fitted attributes: ``topo_``, ``solution_`` (full grid), ``factorization_``,
    ``errors_``, ``timings_``.
    """

    def __init__(self, preset="analytic-helmholtz", p=16, nx=None, ny=None, kappa=None,
                 wavelengths=None, ppw=None, solver="slablu", slab_width=None, workers=None,
                 storage_policy="recompute"):
        self.preset = preset
        self.p = p
        self.nx = nx
        self.ny = ny
        self.kappa = kappa
        self.wavelengths = wavelengths
        self.ppw = ppw
        self.solver = solver
        self.slab_width = slab_width
        self.workers = workers
        self.storage_policy = storage_policy

    def _config(self, kappa=None):
        return RunConfig(preset=self.preset, p=self.p, nx=self.nx, ny=self.ny,
                         kappa=self.kappa if kappa is None else kappa,
                         wavelengths=None if kappa is not None else self.wavelengths,
                         ppw=self.ppw, solver=self.solver, slab_width=self.slab_width,
                         workers=self.workers, storage_policy=self.storage_policy)

    def fit(self, problem=None, y=None):
        if problem is not None and not isinstance(problem, ProblemSpec):
            raise TypeError(f"fit expects a ProblemSpec or None, got {type(problem).__name__}")
        cfg = self._config(kappa=None if problem is None else problem.kappa)
        nx, ny, kappa, _ = cfg.resolve()
        spec = problem if problem is not None else make_preset(self.preset, kappa)
        topo = build_mesh(MeshParams(nx, ny, self.p))
        u, _, fact, _, timings, b, f = solve_problem(
            topo, spec, solver=self.solver, slab_width=self.slab_width, workers=self.workers,
            storage_policy=self.storage_policy)
        rhs = global_rhs(topo, spec, f=f, g=dirichlet_vector(topo, spec))
        self.errors_ = compute_errors(spec, u, GlobalOperator(topo, spec, b=b), rhs,
                                      coords=topo.node_coords)
        self.problem_ = spec
        self.topo_ = topo
        self.solution_ = u
        self.factorization_ = fact
        self.timings_ = timings
        return self

    def predict(self, X):
        """Interpolated solution at the (n, 2) points ``X``."""
        check_is_fitted(self, "solution_")
        return evaluate_field(self.topo_, self.solution_, check_points(X))

    def score(self, X, y):
        """Negative relative 2-norm misfit against reference values ``y``."""
        import numpy as np

        pred = self.predict(X)
        y = np.asarray(y, dtype=float)
        return -float(np.linalg.norm(pred - y) / np.linalg.norm(y))
