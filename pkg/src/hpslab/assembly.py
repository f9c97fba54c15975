"""Reduced interface system, full collocation system, and reconstruction.

Full-grid rows, by node class:

* element interior: the collocated PDE, ``(A_loc u)_j = f_j``;
* active interface node: outward normal derivatives of the two adjacent
  elements sum to zero;
* Dirichlet node: identity, right-hand side ``g``;
* interior cross point: ``u_c - (mean of the four edge extrapolants) = 0``.

Cross points never appear in the PDE or flux rows, so the last kind only fixes
the value reported there.

With ``scaling="reference"`` (the default) PDE rows are multiplied by
``(a/2)^2`` and flux rows by ``a/2``, i.e. both are written for the reference
element ``[-1, 1]^2``. The solution is unchanged; only the row norms are,
which keeps the residual at rounding level independent of the element size.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._validation import CapExceededError
from .leaf import batched_leaf_solve, leaf_basis, sample_fields
from .mesh import CORNER, DIRICHLET, INTERFACE

GLOBAL_CAP = 200_000
SCALINGS = ("reference", "physical")


def row_scales(a, scaling):
    """(PDE-row factor, flux-row factor) for the requested normalisation."""
    if scaling == "reference":
        return (a / 2.0) ** 2, a / 2.0
    if scaling == "physical":
        return 1.0, 1.0
    raise ValueError(f"scaling must be one of {SCALINGS}")


def dirichlet_vector(topo, spec):
    """Full-grid vector with ``g`` on Dirichlet nodes and zero elsewhere."""
    g = np.zeros(topo.N)
    idx = topo.dirichlet_nodes
    g[idx] = spec.dirichlet_g(topo.node_coords[idx])
    return g


@dataclass(eq=False)
class ReducedSystem:
    """``A~ u~ = f~`` on the active nodes, in the mesh's active ordering."""

    topo: object
    matrix: sp.csr_matrix
    rhs: np.ndarray

    @property
    def n_active(self):
        return self.matrix.shape[0]

    def block(self, edge_a, edge_b):
        """Dense coupling block between two interface edges."""
        sa = self.topo.edge_active_slice(edge_a)
        sb = self.topo.edge_active_slice(edge_b)
        return self.matrix[sa, sb].toarray()

    @property
    def blocks(self):
        """``{(edge_a, edge_b): dense block}`` for every edge pair sharing an element."""
        topo = self.topo
        pairs = set()
        by_elem = {}
        for edge, (e0, e1) in enumerate(topo.edge_elements):
            by_elem.setdefault(int(e0), []).append(edge)
            by_elem.setdefault(int(e1), []).append(edge)
        for edges in by_elem.values():
            pairs.update((i, j) for i in edges for j in edges)
        return {pair: self.block(*pair) for pair in sorted(pairs)}

    def dump_triplets(self, path):
        """Coordinate-triplet text: header ``n nnz``, then ``i j value`` lines, then ``rhs`` lines."""
        A = self.matrix.tocoo()
        with open(path, "w") as fh:
            fh.write(f"{A.shape[0]} {A.nnz}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
            for v in self.rhs:
                fh.write(f"{float(v)!r}\n")


def _element_boundary_maps(topo, basis):
    bnodes = topo.element_node_index[:, basis.boundary_idx]
    return bnodes, topo.active_index[bnodes], topo.node_class[bnodes] == DIRICHLET


def assemble_reduced(topo, leaves, spec, g=None):
    """Sum condensed leaf fluxes into the active-node system.

    Each row states that the outward fluxes of the two elements sharing the
    node cancel; known Dirichlet values and body-load fluxes go to the right.
    """
    basis = leaves.basis
    if g is None:
        g = dirichlet_vector(topo, spec)
    bnodes, act, is_dir = _element_boundary_maps(topo, basis)
    hits = np.bincount(act[act >= 0], minlength=topo.n_active)
    if np.any(hits != 2):
        raise RuntimeError("inconsistent edge ordering: active node not shared by exactly two elements")

    gv = np.where(is_dir, g[bnodes], 0.0)
    known = leaves.w_equiv + np.einsum("enm,em->en", leaves.T_flux, gv)
    rows_ok = act >= 0
    rhs = -np.bincount(act[rows_ok], weights=known[rows_ok], minlength=topo.n_active)

    R = np.broadcast_to(act[:, :, None], leaves.T_flux.shape)
    C = np.broadcast_to(act[:, None, :], leaves.T_flux.shape)
    keep = (R >= 0) & (C >= 0)
    n = topo.n_active
    A = sp.coo_matrix((leaves.T_flux[keep], (R[keep], C[keep])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return ReducedSystem(topo=topo, matrix=A, rhs=rhs)


class GlobalOperator:
    """Matrix-free application of the full N x N collocation operator."""

    def __init__(self, topo, spec, b=None, scaling="reference"):
        self.topo = topo
        self.pde_scale, self.flux_scale = row_scales(topo.a, scaling)
        self.kappa = spec.kappa
        self.basis = leaf_basis(topo.p, topo.a)
        if b is None:
            b = np.asarray(spec.b_field(topo.node_coords), dtype=float)
        self.b = b
        self._corner_op = topo.corner_operator()

    def __call__(self, u):
        return self.apply(u)

    def apply(self, u):
        topo, basis = self.topo, self.basis
        u = np.asarray(u, dtype=float)
        enodes = topo.element_node_index
        ii = basis.interior_idx
        out = np.zeros(topo.N)
        K_int = basis.K[ii]
        Dn = basis.Dn
        bnd = enodes[:, basis.boundary_idx]
        act_mask = topo.node_class[bnd] == INTERFACE
        flux = np.zeros(topo.N)
        for lo in range(0, topo.n_elements, 256):
            U = u[enodes[lo:lo + 256]]
            gi = enodes[lo:lo + 256, ii]
            out[gi] = self.pde_scale * (U @ K_int.T - self.kappa ** 2 * self.b[gi] * U[:, ii])
            F = U @ Dn.T
            m = act_mask[lo:lo + 256]
            flux += np.bincount(bnd[lo:lo + 256][m], weights=F[m], minlength=topo.N)
        act = topo.active_nodes
        out[act] = self.flux_scale * flux[act]
        d = topo.dirichlet_nodes
        out[d] = u[d]
        c = topo.corner_nodes
        if c.size:
            out[c] = u[c] - self._corner_op @ u[act]
        return out


@dataclass(eq=False)
class GlobalSparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray

    @property
    def N(self):
        return self.matrix.shape[0]


def global_rhs(topo, spec, f=None, g=None, scaling="reference"):
    """Right-hand side of the full system: f on interiors, g on Dirichlet nodes."""
    pde_scale, _ = row_scales(topo.a, scaling)
    if f is None:
        f = np.asarray(spec.body_load_f(topo.node_coords), dtype=float)
    if g is None:
        g = dirichlet_vector(topo, spec)
    rhs = np.zeros(topo.N)
    interior = topo.node_class == 0
    rhs[interior] = pde_scale * f[interior]
    d = topo.dirichlet_nodes
    rhs[d] = g[d]
    return rhs


def assemble_global(topo, spec, *, cap=GLOBAL_CAP, b=None, f=None, g=None, scaling="reference"):
    """Assemble the full sparse collocation system (oracle and residual path)."""
    if topo.N > cap:
        raise CapExceededError(f"global system of size {topo.N} exceeds cap {cap}")
    pde_scale, flux_scale = row_scales(topo.a, scaling)
    basis = leaf_basis(topo.p, topo.a)
    if b is None or f is None:
        b_s, f_s = sample_fields(topo, spec)
        b = b_s if b is None else b
        f = f_s if f is None else f
    enodes = topo.element_node_index
    rows, cols, vals = [], [], []

    # interior collocation rows: 2p-1 entries each
    ii = basis.interior_idx
    li, lj = np.nonzero(basis.K_pattern[ii])
    kvals = basis.K[ii[li], lj]
    diag = ii[li] == lj
    gi = enodes[:, ii[li]]
    rows.append(gi.ravel())
    cols.append(enodes[:, lj].ravel())
    v = np.broadcast_to(kvals, gi.shape).copy()
    v[:, diag] -= spec.kappa ** 2 * b[gi[:, diag]]
    vals.append(pde_scale * v.ravel())

    # flux rows: each adjacent element contributes its outward derivative
    bb = basis.boundary_idx
    li, lj = np.nonzero(basis.Dn_pattern)
    gb = enodes[:, bb[li]]
    keep = topo.node_class[gb] == INTERFACE
    rows.append(gb[keep])
    cols.append(enodes[:, lj][keep])
    vals.append(flux_scale * np.broadcast_to(basis.Dn[li, lj], gb.shape)[keep])

    d = topo.dirichlet_nodes
    rows.append(d)
    cols.append(d)
    vals.append(np.ones(d.size))

    c = topo.corner_nodes
    if c.size:
        C = topo.corner_operator().tocoo()
        rows += [c, c[C.row]]
        cols += [c, topo.active_nodes[C.col]]
        vals += [np.ones(c.size), -C.data]

    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(topo.N, topo.N)).tocsr()
    A.sum_duplicates()
    return GlobalSparseSystem(matrix=A, rhs=global_rhs(topo, spec, f=f, g=g, scaling=scaling))


def reconstruct_full_solution(topo, leaves, reduced_solution, spec, f=None, g=None, *, workers=None):
    """Place interface and boundary values, recover corners, then solve every leaf interior."""
    if f is None:
        f = np.asarray(spec.body_load_f(topo.node_coords), dtype=float)
    if g is None:
        g = dirichlet_vector(topo, spec)
    u = np.zeros(topo.N)
    d = topo.dirichlet_nodes
    u[d] = g[d]
    u[topo.active_nodes] = reduced_solution
    if topo.corner_nodes.size:
        u[topo.corner_nodes] = topo.corner_operator() @ reduced_solution
    return batched_leaf_solve(topo, leaves, u, f, workers=workers)
