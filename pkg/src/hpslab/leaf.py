"""Per-element collocation operators and static condensation.

A leaf is one ``p x p`` tensor patch of Lobatto nodes, local index
``iy * p + ix``. Its ``4(p-1)`` edge nodes are ordered south, east, north,
west (see :func:`hpslab.mesh._local_boundary_order`), and interior nodes
follow in ascending local index.

Condensation solves the interior Dirichlet problem once per leaf and keeps
two boundary maps: ``T_flux`` (edge values -> outward normal derivative) and
``w_equiv`` (the part of that normal derivative due to the body load).
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ._validation import ParameterError, ResonanceError
from .chebyshev import cheb_diff_matrix, cheb_nodes, scale_to_interval
from .mesh import _local_boundary_order

PIVOT_RTOL = 1e-12
STORAGE_POLICIES = ("store", "recompute")


def default_workers():
    return os.cpu_count() or 1


class LeafBasis:
    """Operators shared by every element of side ``a`` at order ``p``."""

    def __init__(self, p, a):
        self.p = p
        self.a = a
        D = scale_to_interval(cheb_diff_matrix(cheb_nodes(p)), a).entries
        I = np.eye(p)
        self.D = D
        self.Dx = np.kron(I, D)
        self.Dy = np.kron(D, I)
        D2 = D @ D
        self.K = -(np.kron(I, D2) + np.kron(D2, I))
        self.boundary_idx = _local_boundary_order(p)
        ix = np.tile(np.arange(p), p)
        iy = np.repeat(np.arange(p), p)
        self.interior_idx = np.flatnonzero((ix > 0) & (ix < p - 1) & (iy > 0) & (iy < p - 1))

        edge = np.arange(p)
        self.D_normal = (
            -self.Dy[edge],                  # south, ascending x
            self.Dx[edge * p + (p - 1)],     # east, ascending y
            self.Dy[(p - 1) * p + edge],     # north, ascending x
            -self.Dx[edge * p],              # west, ascending y
        )
        S, E, Nn, W = self.D_normal
        # normal derivative at each boundary node, using its owning edge
        self.Dn = np.vstack([S, E[1:], Nn[:-1], W[1:-1]])
        Px = np.kron(I, np.ones((p, p))) != 0
        Py = np.kron(np.ones((p, p)), I) != 0
        self.K_pattern = Px | Py
        self.Dn_pattern = np.vstack([Py[edge], Px[edge * p + (p - 1)][1:],
                                     Py[(p - 1) * p + edge][:-1], Px[edge * p][1:-1]])
        ii, bb = self.interior_idx, self.boundary_idx
        self.K_ii = self.K[np.ix_(ii, ii)]
        self.K_ib = self.K[np.ix_(ii, bb)]
        self.Dn_i = self.Dn[:, ii]
        self.Dn_b = self.Dn[:, bb]
        for arr in (self.D, self.Dx, self.Dy, self.K, self.Dn, self.K_ii, self.K_ib,
                    self.Dn_i, self.Dn_b, *self.D_normal):
            arr.setflags(write=False)

    @property
    def n_boundary(self):
        return 4 * (self.p - 1)

    @property
    def n_interior(self):
        return (self.p - 2) ** 2

    def interior_block(self, kappa, b_interior):
        A = self.K_ii.copy()
        A[np.diag_indices_from(A)] -= kappa ** 2 * b_interior
        return A


@lru_cache(maxsize=16)
def leaf_basis(p, a):
    return LeafBasis(p, a)


@dataclass(frozen=True, eq=False)
class LeafOperators:
    element_id: int
    A_loc: np.ndarray
    interior_idx: np.ndarray
    boundary_idx: np.ndarray
    D_normal: tuple
    kappa: float
    basis: LeafBasis


@dataclass(frozen=True, eq=False)
class CondensedLeaf:
    element_id: int
    S_solve: np.ndarray
    T_flux: np.ndarray
    w_equiv: np.ndarray
    load_map: Optional[tuple] = None  # (lu, piv) under "store"; None means recompute


def build_leaf_operator(topo, spec, element_id):
    """Dense local operator ``-(Dxx + Dyy) - kappa^2 diag(b)`` for one element."""
    basis = leaf_basis(topo.p, topo.a)
    X = topo.node_coords[topo.element_node_index[element_id]]
    b = np.asarray(spec.b_field(X), dtype=float)
    A = basis.K.copy()
    A[np.diag_indices_from(A)] -= spec.kappa ** 2 * b
    return LeafOperators(element_id=int(element_id), A_loc=A, interior_idx=basis.interior_idx,
                         boundary_idx=basis.boundary_idx, D_normal=basis.D_normal,
                         kappa=float(spec.kappa), basis=basis)


def _factor_interior(A_ii):
    lu, piv = lu_factor(A_ii, check_finite=False)
    scale = np.abs(A_ii).sum(axis=1).max()
    ok = np.min(np.abs(np.diagonal(lu))) >= PIVOT_RTOL * scale
    return lu, piv, ok


def _condense_arrays(basis, A_ii, A_ib, f_i):
    lu, piv, ok = _factor_interior(A_ii)
    if not ok:
        return None
    nb = A_ib.shape[1]
    rhs = np.empty((A_ii.shape[0], nb + 1))
    rhs[:, :nb] = -A_ib
    rhs[:, nb] = f_i
    sol = lu_solve((lu, piv), rhs, check_finite=False)
    S = sol[:, :nb]
    T = basis.Dn_b + basis.Dn_i @ S
    w = basis.Dn_i @ sol[:, nb]
    return S, T, w, lu, piv


def condense_leaf(ops, f_local, storage_policy="recompute"):
    """Eliminate the interior of one leaf."""
    basis = ops.basis
    ii, bb = ops.interior_idx, ops.boundary_idx
    f_local = np.asarray(f_local, dtype=float)
    A_ii = ops.A_loc[np.ix_(ii, ii)]
    A_ib = ops.A_loc[np.ix_(ii, bb)]
    out = _condense_arrays(basis, A_ii, A_ib, f_local[ii])
    if out is None:
        raise ResonanceError([ops.element_id], kappa=ops.kappa, p=basis.p)
    S, T, w, lu, piv = out
    load_map = (lu, piv) if storage_policy == "store" else None
    return CondensedLeaf(element_id=ops.element_id, S_solve=S, T_flux=T, w_equiv=w,
                         load_map=load_map)


def leaf_solve(ops, condensed, boundary_values, f_local):
    """Full local solution from edge values: ``u_i = A_ii^{-1} (f_i - A_ib v)``.

    Without a stored factorization the interior block is rebuilt from ``ops``
    and refactored.
    """
    ii, bb = ops.interior_idx, ops.boundary_idx
    v = np.asarray(boundary_values, dtype=float)
    f_local = np.asarray(f_local, dtype=float)
    if condensed.load_map is None:
        lu, piv, ok = _factor_interior(ops.A_loc[np.ix_(ii, ii)])
        if not ok:
            raise ResonanceError([ops.element_id], kappa=ops.kappa, p=ops.basis.p)
    else:
        lu, piv = condensed.load_map
    u = np.empty(ops.basis.p ** 2)
    u[bb] = v
    u[ii] = lu_solve((lu, piv), f_local[ii] - ops.A_loc[np.ix_(ii, bb)] @ v, check_finite=False)
    return u


class LeafBatch:
    """Condensed leaves for a whole mesh, stored as stacked arrays.

    ``lu``/``piv`` are populated only under the "store" policy; otherwise the
    interior blocks are rebuilt from ``b_interior`` on every solve.
    """

    def __init__(self, basis, kappa, b_interior, T_flux, w_equiv, S_solve, lu, piv, storage_policy):
        self.basis = basis
        self.kappa = kappa
        self.b_interior = b_interior
        self.T_flux = T_flux
        self.w_equiv = w_equiv
        self.S_solve = S_solve
        self.lu = lu
        self.piv = piv
        self.storage_policy = storage_policy

    def __len__(self):
        return self.T_flux.shape[0]

    def __getitem__(self, e):
        load_map = None if self.lu is None else (self.lu[e], self.piv[e])
        return CondensedLeaf(element_id=int(e), S_solve=self.S_solve[e], T_flux=self.T_flux[e],
                             w_equiv=self.w_equiv[e], load_map=load_map)

    @property
    def stored_bytes(self):
        n = self.T_flux.nbytes + self.w_equiv.nbytes + self.S_solve.nbytes
        if self.lu is not None:
            n += self.lu.nbytes + self.piv.nbytes
        return n


def _chunks(n, size=16):
    # fixed-size chunks so the work split never depends on the worker count
    return [(lo, min(n, lo + size)) for lo in range(0, n, size)]


def _run_chunks(fn, n, workers):
    chunks = _chunks(n)
    if workers <= 1:
        results = [fn(lo, hi) for lo, hi in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: fn(*c), chunks))
    bad = [e for r in results for e in (r or [])]
    return sorted(bad)


def sample_fields(topo, spec):
    """b and f at every global node."""
    X = topo.node_coords
    return np.asarray(spec.b_field(X), dtype=float), np.asarray(spec.body_load_f(X), dtype=float)


def batched_condense(topo, spec, f=None, *, workers=None, storage_policy="recompute", b=None):
    """Condense every element; elements run in parallel chunks.

    ``f`` is the body load on the full grid (defaults to sampling the spec).
    Results are bitwise independent of ``workers``.
    """
    if storage_policy not in STORAGE_POLICIES:
        raise ParameterError(f"storage_policy must be one of {STORAGE_POLICIES}")
    workers = default_workers() if workers is None else int(workers)
    basis = leaf_basis(topo.p, topo.a)
    if b is None or f is None:
        b_s, f_s = sample_fields(topo, spec)
        b = b_s if b is None else b
        f = f_s if f is None else f
    E = topo.n_elements
    ni, nb = basis.n_interior, basis.n_boundary
    nodes_i = topo.element_node_index[:, basis.interior_idx]
    b_int = b[nodes_i]
    f_int = f[nodes_i]
    T = np.empty((E, nb, nb))
    w = np.empty((E, nb))
    S = np.empty((E, ni, nb))
    store = storage_policy == "store"
    lu = np.empty((E, ni, ni)) if store else None
    piv = np.empty((E, ni), dtype=np.int32) if store else None
    kappa = spec.kappa

    def work(lo, hi):
        bad = []
        for e in range(lo, hi):
            out = _condense_arrays(basis, basis.interior_block(kappa, b_int[e]), basis.K_ib, f_int[e])
            if out is None:
                bad.append(e)
                continue
            S[e], T[e], w[e] = out[0], out[1], out[2]
            if store:
                lu[e], piv[e] = out[3], out[4]
        return bad

    bad = _run_chunks(work, E, workers)
    if bad:
        raise ResonanceError(bad, kappa=kappa, p=topo.p)
    return LeafBatch(basis, kappa, b_int, T, w, S, lu, piv, storage_policy)


def batched_leaf_solve(topo, leaves, u_full, f, *, workers=None):
    """Fill element interiors of ``u_full`` in place from its edge values."""
    workers = default_workers() if workers is None else int(workers)
    basis = leaves.basis
    ii, bb = basis.interior_idx, basis.boundary_idx
    enodes = topo.element_node_index
    V = u_full[enodes[:, bb]]
    F = f[enodes[:, ii]]
    U_int = np.empty((topo.n_elements, basis.n_interior))

    def work(lo, hi):
        bad = []
        for e in range(lo, hi):
            if leaves.lu is None:
                lu, piv, ok = _factor_interior(basis.interior_block(leaves.kappa, leaves.b_interior[e]))
                if not ok:
                    bad.append(e)
                    continue
            else:
                lu, piv = leaves.lu[e], leaves.piv[e]
            U_int[e] = lu_solve((lu, piv), F[e] - basis.K_ib @ V[e], check_finite=False)
        return bad

    bad = _run_chunks(work, topo.n_elements, workers)
    if bad:
        raise ResonanceError(bad, kappa=leaves.kappa, p=topo.p)
    u_full[enodes[:, ii]] = U_int
    return u_full
