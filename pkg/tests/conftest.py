import numpy as np
import pytest

from hpslab import slablu
from hpslab.assembly import assemble_global, assemble_reduced, reconstruct_full_solution
from hpslab.leaf import batched_condense
from hpslab.mesh import MeshParams, build_mesh
from hpslab.oracle import dense_solve, densify
from hpslab.problems import ProblemSpec


def const_spec(kappa=0.0, b=1.0, g=None, f=0.0):
    g = g or (lambda X: np.ones(len(X)))
    return ProblemSpec(kappa=kappa, b_field=lambda X: np.full(len(X), b), dirichlet_g=g,
                       body_load_f=lambda X: np.full(len(X), f))


def hps_solve(topo, spec, slab_width=1, workers=1, storage_policy="recompute"):
    leaves = batched_condense(topo, spec, workers=workers, storage_policy=storage_policy)
    red = assemble_reduced(topo, leaves, spec)
    fact = slablu.factor(red, slablu.partition_slabs(topo, red, slab_width), workers=workers)
    ured = slablu.solve(fact, red.rhs)
    return reconstruct_full_solution(topo, leaves, ured, spec, workers=workers)


def oracle_solve(topo, spec):
    return dense_solve(densify(assemble_global(topo, spec)))


@pytest.fixture
def mesh():
    return lambda nx, ny, p: build_mesh(MeshParams(nx, ny, p))
