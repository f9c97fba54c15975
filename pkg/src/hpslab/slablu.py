"""Two-level slab direct solver for the reduced interface system.

Element columns are grouped into vertical slabs. Unknowns strictly inside a
slab (its horizontal edges and the vertical edges between its own columns)
are eliminated slab by slab, in parallel. What remains lives on the vertical
lines separating slabs and is block tridiagonal; it is factored by a forward
block-LU sweep.

Slab interiors are reordered row by row (element rows bottom to top), which
makes each slab-interior block banded with bandwidth about ``2 w (p-2)``.
They are factored with LAPACK's partially pivoted band LU, so pivoting is
free inside a slab but never crosses slab or interface boundaries.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack, lu_factor, lu_solve

from ._validation import ParameterError, SingularBlockError, check_positive_int
from .leaf import STORAGE_POLICIES, default_workers
from .mesh import HORIZONTAL

PIVOT_RTOL = 1e-12


@dataclass(eq=False)
class SlabPartition:
    n_slabs: int
    slab_width: int
    columns: list
    interior: list
    interfaces: list

    def check_coupling(self, matrix):
        """True when each slab interior touches only its two bounding interfaces."""
        A = sp.csr_matrix(matrix)
        owner = np.full(A.shape[0], -1, dtype=np.int64)
        for s, idx in enumerate(self.interior):
            owner[idx] = 2 * s
        for k, idx in enumerate(self.interfaces):
            owner[idx] = 2 * k + 1
        coo = A.tocoo()
        keep = coo.data != 0
        a, b = owner[coo.row[keep]], owner[coo.col[keep]]
        both_interior = (a % 2 == 0) & (b % 2 == 0)
        if np.any(both_interior & (a != b)):
            return False
        # slab s (2s) may meet interfaces s-1 (2s-1) and s (2s+1): labels differ by 1
        mixed = (a % 2) != (b % 2)
        if np.any(mixed & (np.abs(a - b) != 1)):
            return False
        # interfaces couple only to neighbours
        both_x = (a % 2 == 1) & (b % 2 == 1)
        return not np.any(both_x & (np.abs(a - b) > 2))


def default_slab_width(topo, c=0.5, max_points=400):
    """Slab width in elements, targeting ``c * n^(2/3)`` active points across a slab.

    ``n`` is the number of active points along one element column. Expressing
    the target in points rather than elements keeps the slab's physical width
    (and hence the factor cost) roughly independent of ``p``.
    """
    n = topo.ny * (topo.p - 2)
    target = min(max_points, c * n ** (2.0 / 3.0))
    w = int(round(target / (topo.p - 2)))
    return int(min(max(w, 1), max(topo.nx // 2, 1)))


def partition_slabs(topo, reduced=None, slab_width=None):
    """Split element columns into contiguous slabs; the last slab takes the remainder."""
    if slab_width is None:
        slab_width = default_slab_width(topo)
    w = check_positive_int(slab_width, "slab_width")
    n_slabs = topo.nx // w
    if n_slabs < 2:
        raise ParameterError(f"slab_width={w} leaves fewer than 2 slabs for nx={topo.nx}")
    starts = [s * w for s in range(n_slabs)]
    columns = [(c0, (starts[s + 1] - 1) if s + 1 < n_slabs else topo.nx - 1)
               for s, c0 in enumerate(starts)]

    kind = topo.edge_kind
    cx, cy = topo.edge_cell[:, 0], topo.edge_cell[:, 1]
    k = topo.p - 2
    local = np.arange(k)
    interior, interfaces = [], []
    for s, (c0, c1) in enumerate(columns):
        horiz = (kind == HORIZONTAL) & (cx >= c0) & (cx <= c1)
        vert = (kind != HORIZONTAL) & (cx > c0) & (cx <= c1)
        edges = np.flatnonzero(horiz | vert)
        # row-major sweep: verticals of element row r, then horizontals above row r
        key = cy[edges] * 2 * (topo.nx + 1) + np.where(kind[edges] == HORIZONTAL, topo.nx + 1, 0) + cx[edges]
        edges = edges[np.argsort(key, kind="stable")]
        interior.append((edges[:, None] * k + local).reshape(-1))
        if s + 1 < n_slabs:
            line = c1 + 1
            xe = np.flatnonzero((kind != HORIZONTAL) & (cx == line))
            xe = xe[np.argsort(cy[xe], kind="stable")]
            interfaces.append((xe[:, None] * k + local).reshape(-1))
    part = SlabPartition(n_slabs=n_slabs, slab_width=w, columns=columns,
                         interior=interior, interfaces=interfaces)
    total = sum(i.size for i in interior) + sum(i.size for i in interfaces)
    if total != topo.n_active:
        raise RuntimeError("slab partition does not cover the active nodes")
    if reduced is not None and not part.check_coupling(reduced.matrix):
        raise RuntimeError("reduced system couples non-adjacent slabs")
    return part


class _BandLU:
    """Partially pivoted band LU of a sparse square block."""

    def __init__(self, A, where, index):
        A = sp.coo_matrix(A)
        m = A.shape[0]
        self.m = m
        if m == 0:
            self.kl = self.ku = 0
            self.lu = np.zeros((1, 0))
            self.ipiv = np.zeros(0, dtype=np.int32)
            return
        d = A.row - A.col
        kl = int(max(d.max(), 0))
        ku = int(max(-d.min(), 0))
        ab = np.zeros((2 * kl + ku + 1, m), order="F")
        ab[kl + ku + A.row - A.col, A.col] = A.data
        lu, ipiv, info = lapack.dgbtrf(ab, kl, ku, overwrite_ab=1)
        if info < 0:
            raise RuntimeError(f"dgbtrf argument error {info}")
        scale = float(np.abs(A.tocsr()).sum(axis=1).max())
        pivot = float(np.min(np.abs(lu[kl + ku])))
        if info > 0 or pivot < PIVOT_RTOL * scale:
            raise SingularBlockError(where, index, pivot, PIVOT_RTOL * scale)
        self.kl, self.ku, self.lu, self.ipiv = kl, ku, lu, ipiv

    def solve(self, B):
        if self.m == 0:
            return np.zeros_like(B, dtype=float)
        vec = np.ndim(B) == 1
        B = np.array(np.reshape(B, (self.m, -1)), dtype=float, order="F")
        x, info = lapack.dgbtrs(self.lu, self.kl, self.ku, B, self.ipiv, overwrite_b=1)
        if info != 0:
            raise RuntimeError(f"dgbtrs failed with info={info}")
        return x[:, 0] if vec else x

    @property
    def nbytes(self):
        return self.lu.nbytes + self.ipiv.nbytes


def _dense_lu(M, where, index):
    lu, piv = lu_factor(M, check_finite=False)
    scale = np.abs(M).sum(axis=1).max() if M.size else 0.0
    pivot = float(np.min(np.abs(np.diagonal(lu)))) if M.size else 1.0
    if pivot < PIVOT_RTOL * scale:
        raise SingularBlockError(where, index, pivot, PIVOT_RTOL * scale)
    return lu, piv


@dataclass(eq=False)
class SlabFactorization:
    partition: SlabPartition
    n: int
    A_II: list
    A_IX: list
    A_XI: list
    slab_factors: list
    D_lu: list
    L: list
    U: list
    storage_policy: str
    workers: int
    matrix: sp.csr_matrix = None
    refine: int = 2
    timings: dict = field(default_factory=dict)

    @property
    def stored_bytes(self):
        n = sum(f.nbytes for f in self.slab_factors if f is not None)
        n += sum(lu.nbytes + piv.nbytes for lu, piv in self.D_lu)
        n += sum(x.nbytes for x in self.L) + sum(x.nbytes for x in self.U)
        return n

    def _slab_factor(self, s):
        f = self.slab_factors[s]
        return f if f is not None else _BandLU(self.A_II[s], "slab", s)

    def solve(self, rhs):
        return solve(self, rhs)


def _map_slabs(fn, n, workers):
    if workers <= 1 or n <= 1:
        return [fn(s) for s in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def factor(reduced, part, workers=None, storage_policy="store", refine=2):
    """Eliminate slab interiors, then block-LU the interface system.

    ``refine`` sets how many iterative-refinement sweeps against the reduced
    matrix each :func:`solve` performs (0 gives the bare factorization).
    """
    if storage_policy not in STORAGE_POLICIES:
        raise ParameterError(f"storage_policy must be one of {STORAGE_POLICIES}")
    workers = default_workers() if workers is None else int(workers)
    A = sp.csr_matrix(reduced.matrix if hasattr(reduced, "matrix") else reduced)
    S = part.n_slabs
    X = part.interfaces

    def bounding(s):
        return ([X[s - 1]] if s > 0 else []) + ([X[s]] if s < S - 1 else [])

    t0 = time.perf_counter()

    def eliminate(s):
        I = part.interior[s]
        Xs = np.concatenate(bounding(s))
        rows = A[I]
        A_II = rows[:, I].tocsr()
        A_IX = rows[:, Xs].tocsr()
        A_XI = A[Xs][:, I].tocsr()
        lu = _BandLU(A_II, "slab", s)
        Y = lu.solve(A_IX.toarray())
        C = A_XI @ Y
        return A_II, A_IX, A_XI, lu, C

    results = _map_slabs(eliminate, S, workers)
    t1 = time.perf_counter()

    # Schur complements C_s are ordered [left interface, right interface]
    T_diag, T_up, T_low = [], [], []
    for k in range(S - 1):
        nk = X[k].size
        Ckk = A[X[k]][:, X[k]].toarray()
        C_left = results[k][4]
        C_right = results[k + 1][4]
        off = X[k - 1].size if k > 0 else 0  # slab k lists its left interface first
        Ckk -= C_left[off:off + nk, off:off + nk]
        Ckk -= C_right[:nk, :nk]
        T_diag.append(Ckk)
        if k + 1 < S - 1:
            n1 = X[k + 1].size
            T_up.append(A[X[k]][:, X[k + 1]].toarray() - C_right[:nk, nk:nk + n1])
            T_low.append(A[X[k + 1]][:, X[k]].toarray() - C_right[nk:nk + n1, :nk])

    D_lu, L = [], []
    for k in range(S - 1):
        Dk = T_diag[k]
        if k > 0:
            Lk = lu_solve(D_lu[k - 1], T_low[k - 1].T, trans=1, check_finite=False).T
            Dk = Dk - Lk @ T_up[k - 1]
            L.append(Lk)
        D_lu.append(_dense_lu(Dk, "interface", k))
    t2 = time.perf_counter()

    store = storage_policy == "store"
    return SlabFactorization(
        partition=part, n=A.shape[0],
        A_II=[r[0] for r in results], A_IX=[r[1] for r in results], A_XI=[r[2] for r in results],
        slab_factors=[r[3] if store else None for r in results],
        D_lu=D_lu, L=L, U=T_up, storage_policy=storage_policy, workers=workers,
        matrix=A, refine=int(refine), timings={"slab_elimination": t1 - t0, "interface_factor": t2 - t1},
    )


def solve(fact, rhs):
    """Solve ``A~ x = rhs`` with the factorization plus ``fact.refine`` refinement sweeps.

    Refinement recovers the digits that the slab-local pivoting gives up when
    a slab interior is close to resonant.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (fact.n,):
        raise ParameterError(f"rhs must have shape ({fact.n},), got {rhs.shape}")
    t0 = time.perf_counter()
    factors = _map_slabs(fact._slab_factor, fact.partition.n_slabs, fact.workers)
    x = _apply(fact, factors, rhs)
    for _ in range(fact.refine):
        r = rhs - fact.matrix @ x
        if not np.any(r):
            break
        x = x + _apply(fact, factors, r)
    fact.timings["solve"] = time.perf_counter() - t0
    return x


def _apply(fact, factors, rhs):
    part = fact.partition
    S = part.n_slabs
    X = part.interfaces
    bI = [rhs[idx] for idx in part.interior]
    z = _map_slabs(lambda s: factors[s].solve(bI[s]), S, fact.workers)

    # interface right-hand sides after slab elimination
    y = []
    for k in range(S - 1):
        nk = X[k].size
        off = X[k - 1].size if k > 0 else 0
        bk = rhs[X[k]] - (fact.A_XI[k] @ z[k])[off:off + nk] - (fact.A_XI[k + 1] @ z[k + 1])[:nk]
        if k > 0:
            bk = bk - fact.L[k - 1] @ y[k - 1]
        y.append(bk)
    x = [None] * (S - 1)
    for k in range(S - 2, -1, -1):
        r = y[k] if k == S - 2 else y[k] - fact.U[k] @ x[k + 1]
        x[k] = lu_solve(fact.D_lu[k], r, check_finite=False)

    out = np.empty(fact.n)
    for k in range(S - 1):
        out[X[k]] = x[k]

    def back(s):
        parts = ([x[s - 1]] if s > 0 else []) + ([x[s]] if s < S - 1 else [])
        return factors[s].solve(bI[s] - fact.A_IX[s] @ np.concatenate(parts))

    for s, u in enumerate(_map_slabs(back, S, fact.workers)):
        out[part.interior[s]] = u
    return out
