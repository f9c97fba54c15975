"""Spectral-element direct solver for the 2D variable-coefficient Helmholtz equation."""

from ._validation import (CapExceededError, ParameterError, ResonanceError,
                          SingularBlockError)
from .assembly import (GlobalOperator, GlobalSparseSystem, ReducedSystem, assemble_global,
                       assemble_reduced, reconstruct_full_solution)
from .bench import (RunConfig, RunRecord, emit_csv, render_field, run_p_sweep, run_scaling,
                    run_single)
from .chebyshev import (ChebGrid1D, DiffMatrix1D, barycentric_interp, cheb_diff_matrix,
                        cheb_nodes, scale_to_interval)
from .estimator import HPSSolver
from .leaf import (CondensedLeaf, LeafOperators, batched_condense, build_leaf_operator,
                   condense_leaf, leaf_solve)
from .mesh import MeshParams, MeshTopology, build_mesh
from .oracle import DenseSystem, SingularMatrixError, dense_solve, densify
from .problems import (ErrorReport, ProblemSpec, bessel_j0, compute_errors,
                       make_analytic_helmholtz, make_gaussian_pulse_scattering, make_preset)
from .slablu import SlabFactorization, SlabPartition, factor, partition_slabs, solve

__version__ = "0.1.0"
