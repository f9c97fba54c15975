import dataclasses

import numpy as np
import pytest

from hpslab import CapExceededError, slablu
from hpslab.assembly import (GlobalOperator, assemble_global, assemble_reduced,
                             reconstruct_full_solution)
from hpslab.leaf import batched_condense
from hpslab.mesh import INTERIOR, MeshParams, build_mesh
from hpslab.oracle import dense_solve, densify
from hpslab.problems import ProblemSpec, make_analytic_helmholtz

from conftest import const_spec, hps_solve, oracle_solve


def reduced_for(topo, spec):
    leaves = batched_condense(topo, spec, workers=1)
    return leaves, assemble_reduced(topo, leaves, spec)


def test_reduced_constant_solution():
    topo = build_mesh(MeshParams(2, 2, 8))
    spec = const_spec(kappa=0.0)
    _, red = reduced_for(topo, spec)
    assert red.n_active == 24
    u = dense_solve(densify(red))
    np.testing.assert_allclose(u, 1.0, atol=1e-10)


def test_reduced_linear_solution():
    topo = build_mesh(MeshParams(3, 3, 8))
    spec = const_spec(kappa=0.0, g=lambda X: X[:, 0].copy())
    _, red = reduced_for(topo, spec)
    u = dense_solve(densify(red))
    np.testing.assert_allclose(u, topo.node_coords[topo.active_nodes, 0], atol=1e-9)


def test_reduced_blocks():
    topo = build_mesh(MeshParams(3, 3, 6))
    _, red = reduced_for(topo, make_analytic_helmholtz(3.0))
    blocks = red.blocks
    k = topo.p - 2
    assert all(b.shape == (k, k) for b in blocks.values())
    # an interior edge touches its own edge plus six others through its two elements
    assert all(len([1 for (a, _) in blocks if a == e]) <= 7 for e in range(len(topo.edge_kind)))
    dense = np.zeros((red.n_active, red.n_active))
    for (a, b), blk in blocks.items():
        dense[topo.edge_active_slice(a), topo.edge_active_slice(b)] = blk
    np.testing.assert_array_equal(dense, red.matrix.toarray())


def test_rows_sum_two_element_fluxes():
    # a node's row is the sum of exactly the two adjacent elements' T_flux rows
    topo = build_mesh(MeshParams(2, 2, 6))
    spec = const_spec(kappa=2.0)
    leaves, red = reduced_for(topo, spec)
    bb = leaves.basis.boundary_idx
    j = 3
    g = topo.active_nodes[j]
    acc = np.zeros(red.n_active)
    for e in range(topo.n_elements):
        loc = np.flatnonzero(topo.element_node_index[e, bb] == g)
        if loc.size:
            act = topo.active_index[topo.element_node_index[e, bb]]
            keep = act >= 0
            np.add.at(acc, act[keep], leaves.T_flux[e, loc[0], keep])
    np.testing.assert_allclose(red.matrix.toarray()[j], acc, rtol=1e-14, atol=1e-12)


def test_edge_ordering_guard():
    topo = build_mesh(MeshParams(2, 2, 6))
    spec = const_spec()
    leaves = batched_condense(topo, spec, workers=1)
    bad_index = topo.active_index.copy()
    bad_index[topo.active_nodes[0]] = 1
    bad = dataclasses.replace(topo, active_index=bad_index)
    with pytest.raises(RuntimeError):
        assemble_reduced(bad, leaves, spec)


def test_dump_triplets(tmp_path):
    topo = build_mesh(MeshParams(2, 2, 5))
    _, red = reduced_for(topo, make_analytic_helmholtz(2.0))
    path = tmp_path / "red.txt"
    red.dump_triplets(path)
    lines = path.read_text().splitlines()
    n, nnz = map(int, lines[0].split())
    assert n == red.n_active and nnz == red.matrix.nnz
    A = np.zeros((n, n))
    for line in lines[1:1 + nnz]:
        i, j, v = line.split()
        A[int(i), int(j)] = float(v)
    np.testing.assert_array_equal(A, red.matrix.toarray())
    np.testing.assert_array_equal([float(v) for v in lines[1 + nnz:]], red.rhs)


def test_global_interior_row_count_and_stencil():
    p = 6
    topo = build_mesh(MeshParams(2, 2, p))
    sys_ = assemble_global(topo, make_analytic_helmholtz(2.0))
    interior = np.flatnonzero(topo.node_class == INTERIOR)
    assert interior.size == 64
    nnz = np.diff(sys_.matrix.indptr)
    assert np.all(nnz[interior] == 2 * p - 1)
    d = topo.dirichlet_nodes
    D = sys_.matrix[d].toarray()
    expected = np.zeros_like(D)
    expected[np.arange(d.size), d] = 1.0
    np.testing.assert_array_equal(D, expected)


def test_global_matvec_on_true_solution():
    topo = build_mesh(MeshParams(4, 4, 20))
    spec = make_analytic_helmholtz(2 * np.pi * 2)
    sys_ = assemble_global(topo, spec)
    u = spec.true_solution(topo.node_coords)
    interior = topo.node_class == INTERIOR
    r = (sys_.matrix @ u - sys_.rhs)[interior]
    scale = np.abs(sys_.matrix[np.flatnonzero(interior)]).sum(axis=1).max() * np.abs(u).max()
    assert np.abs(r).max() <= 1e-8 * scale


def test_global_constant_field():
    topo = build_mesh(MeshParams(3, 3, 7))
    sys_ = assemble_global(topo, const_spec(kappa=0.0))
    r = sys_.matrix @ np.ones(topo.N) - sys_.rhs
    assert np.all(r[topo.dirichlet_nodes] == 0.0)
    assert np.abs(r).max() <= 1e-10


def test_global_cap():
    topo = build_mesh(MeshParams(3, 3, 7))
    with pytest.raises(CapExceededError):
        assemble_global(topo, const_spec(), cap=100)


@pytest.mark.parametrize("scaling", ["reference", "physical"])
def test_matrix_free_matches_sparse(scaling):
    topo = build_mesh(MeshParams(3, 2, 6, domain=(0, 1.5, 0, 1)))
    spec = const_spec(kappa=3.0, b=0.4)
    A = assemble_global(topo, spec, scaling=scaling).matrix
    v = np.random.default_rng(0).standard_normal(topo.N)
    np.testing.assert_allclose(GlobalOperator(topo, spec, scaling=scaling)(v), A @ v,
                               rtol=1e-13, atol=1e-10 * np.abs(A).max())


def test_reconstruct_bessel_accuracy():
    topo = build_mesh(MeshParams(8, 8, 16))
    spec = make_analytic_helmholtz(2 * np.pi * 4)
    u = hps_solve(topo, spec, slab_width=2)
    ut = spec.true_solution(topo.node_coords)
    assert np.linalg.norm(u - ut) / np.linalg.norm(ut) <= 1e-6


def test_reconstruct_constant():
    topo = build_mesh(MeshParams(3, 3, 9))
    u = hps_solve(topo, const_spec(kappa=0.0, g=lambda X: np.full(len(X), -2.5)))
    np.testing.assert_allclose(u, -2.5, atol=1e-10)


def test_reconstruct_oracle_vs_slablu_reduced_solution():
    topo = build_mesh(MeshParams(4, 4, 10))
    spec = make_analytic_helmholtz(2 * np.pi * 2)
    leaves, red = reduced_for(topo, spec)
    u_dense = dense_solve(densify(red))
    fact = slablu.factor(red, slablu.partition_slabs(topo, red, 1))
    u_slab = slablu.solve(fact, red.rhs)
    full = [reconstruct_full_solution(topo, leaves, x, spec) for x in (u_dense, u_slab)]
    assert np.abs(full[0] - full[1]).max() <= 1e-10 * np.abs(full[0]).max()


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("p", [6, 8, 10])
def test_pipeline_matches_global_oracle(n, p):
    topo = build_mesh(MeshParams(n, n, p))
    spec = ProblemSpec(kappa=2 * np.pi, b_field=lambda X: 1 - 0.3 * X[:, 0] * X[:, 1],
                       dirichlet_g=lambda X: np.cos(3 * X[:, 0]) + X[:, 1],
                       body_load_f=lambda X: np.sin(X[:, 0] + 2 * X[:, 1]))
    u = hps_solve(topo, spec)
    ref = oracle_solve(topo, spec)
    assert np.abs(u - ref).max() <= 1e-9 * np.abs(ref).max()


def test_linearity_in_data():
    topo = build_mesh(MeshParams(3, 3, 8))
    g1, g2 = (lambda X: np.sin(4 * X[:, 0])), (lambda X: X[:, 1] ** 2)
    f1, f2 = (lambda X: np.ones(len(X))), (lambda X: X[:, 0])
    b = lambda X: np.ones(len(X))
    mk = lambda g, f: ProblemSpec(5.0, b, g, f)
    u1 = hps_solve(topo, mk(g1, f1))
    u2 = hps_solve(topo, mk(g2, f2))
    u12 = hps_solve(topo, mk(lambda X: g1(X) + g2(X), lambda X: f1(X) + f2(X)))
    assert np.abs(u12 - u1 - u2).max() <= 1e-11 * np.abs(u12).max()


@pytest.mark.parametrize("nx, ny, p", [(2, 2, 4), (4, 4, 8), (6, 3, 12), (5, 5, 16), (4, 4, 32)])
def test_reduced_size_bound(nx, ny, p):
    topo = build_mesh(MeshParams(nx, ny, p, domain=(0, nx, 0, ny)))
    assert topo.n_active <= 2.5 * topo.N / p
