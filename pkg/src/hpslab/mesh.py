"""Uniform element grid on a rectangle with shared Chebyshev-Lobatto nodes.

Global nodes are numbered row-major, ``g = gy * Mx + gx``, where ``gx`` and
``gy`` index the tensor grid of ``Mx = nx*(p-1)+1`` by ``My = ny*(p-1)+1``
points. Elements are numbered column-major, ``e = cx * ny + cy``.

Active nodes (the unknowns after static condensation) are interface nodes
that are not element corners. They are grouped by edge, and edges are
ordered column by column: the horizontal edges inside element column ``cx``
(bottom to top), then the vertical edges on the line to its right. Any run
of consecutive element columns therefore owns a contiguous block of
unknowns, which is what the slab solver relies on.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import ParameterError, check_positive_int
from .chebyshev import cheb_nodes, extrapolation_weights

INTERIOR, INTERFACE, DIRICHLET, CORNER = 0, 1, 2, 3
CLASS_NAMES = {INTERIOR: "interior", INTERFACE: "interface", DIRICHLET: "dirichlet", CORNER: "corner"}

VERTICAL, HORIZONTAL = 0, 1


@dataclass(frozen=True)
class MeshParams:
    nx: int
    ny: int
    p: int
    domain: tuple = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        check_positive_int(self.nx, "nx")
        check_positive_int(self.ny, "ny")
        check_positive_int(self.p, "p", minimum=4)
        x0, x1, y0, y1 = map(float, self.domain)
        if not (x1 > x0 and y1 > y0):
            raise ParameterError(f"degenerate domain {self.domain}")
        ax = (x1 - x0) / self.nx
        ay = (y1 - y0) / self.ny
        if abs(ax - ay) > 1e-12 * max(ax, ay):
            raise ParameterError(f"elements must be square: {ax} x {ay}")

    @property
    def a(self):
        return (self.domain[1] - self.domain[0]) / self.nx

    @property
    def N(self):
        return (self.nx * (self.p - 1) + 1) * (self.ny * (self.p - 1) + 1)

    @property
    def n_active_formula(self):
        nx, ny, p = self.nx, self.ny, self.p
        return ((nx - 1) * ny + (ny - 1) * nx) * (p - 2)


@dataclass(frozen=True, eq=False)
class MeshTopology:
    params: MeshParams
    node_coords: np.ndarray
    node_class: np.ndarray
    node_owner: np.ndarray
    element_node_index: np.ndarray
    element_cell: np.ndarray
    edge_kind: np.ndarray
    edge_nodes: np.ndarray
    edge_elements: np.ndarray
    edge_cell: np.ndarray
    active_nodes: np.ndarray
    active_index: np.ndarray
    corner_nodes: np.ndarray
    corner_edges: np.ndarray
    corner_ends: np.ndarray
    boundary_local: np.ndarray = field(repr=False)
    interior_local: np.ndarray = field(repr=False)

    @property
    def p(self):
        return self.params.p

    @property
    def nx(self):
        return self.params.nx

    @property
    def ny(self):
        return self.params.ny

    @property
    def a(self):
        return self.params.a

    @property
    def N(self):
        return self.node_coords.shape[0]

    @property
    def n_elements(self):
        return self.element_node_index.shape[0]

    @property
    def n_active(self):
        return self.active_nodes.shape[0]

    @property
    def grid_shape(self):
        """(My, Mx): the global tensor grid as an image, row = y index."""
        p = self.p
        return self.ny * (p - 1) + 1, self.nx * (p - 1) + 1

    @property
    def dirichlet_nodes(self):
        return np.flatnonzero(self.node_class == DIRICHLET)

    def element_id(self, cx, cy):
        return cx * self.ny + cy

    def edge_active_slice(self, edge):
        k = self.p - 2
        return slice(edge * k, (edge + 1) * k)

    def corner_operator(self):
        """Sparse map from active values to recovered corner values.

        Each interior cross point takes the mean of the endpoint
        extrapolants of its four incident interface edges.
        """
        import scipy.sparse as sp

        k = self.p - 2
        ext = extrapolation_weights(self.p)
        nc = self.corner_nodes.shape[0]
        rows = np.repeat(np.arange(nc), 4 * k)
        cols = (self.corner_edges[:, :, None] * k + np.arange(k)).reshape(-1)
        vals = 0.25 * ext[self.corner_ends].reshape(-1)
        return sp.csr_matrix((vals, (rows, cols)), shape=(nc, self.n_active))

    def dump_csv(self, path):
        """Write index, x, y, class and containing element ids, one node per row."""
        owners = [[] for _ in range(self.N)]
        for e, nodes in enumerate(self.element_node_index):
            for g in np.unique(nodes):
                owners[g].append(e)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x", "y", "class", "elements"])
            for g in range(self.N):
                x, y = self.node_coords[g]
                w.writerow([g, repr(float(x)), repr(float(y)),
                            CLASS_NAMES[int(self.node_class[g])],
                            ";".join(map(str, owners[g]))])


def _local_boundary_order(p):
    """Local indices of the 4(p-1) edge nodes: south, east, north, west.

    Each edge is listed in ascending coordinate order and a corner belongs to
    the first edge that lists it.
    """
    ix = np.arange(p)
    south = ix
    east = (np.arange(1, p)) * p + (p - 1)
    north = (p - 1) * p + np.arange(p - 1)
    west = np.arange(1, p - 1) * p
    return np.concatenate([south, east, north, west])


def _axis_coords(n_el, p, a, origin):
    """Physical coordinates of the ``n_el*(p-1)+1`` grid lines along one axis."""
    t = cheb_nodes(p).nodes
    g = np.arange(n_el * (p - 1) + 1)
    # shared points take their coordinate from the lower-numbered element
    e = np.maximum(0, (g - 1) // (p - 1))
    i = g - e * (p - 1)
    return origin + a * e + a * (t[i] + 1.0) / 2.0


def build_mesh(params, *, allow_single=False):
    """Build the element grid, global numbering and node classification."""
    nx, ny, p = params.nx, params.ny, params.p
    if nx == 1 and ny == 1 and not allow_single:
        raise ParameterError("a 1x1 mesh has no interfaces; the reduced system would be empty")
    a = params.a
    x0, _, y0, _ = map(float, params.domain)
    Mx, My = nx * (p - 1) + 1, ny * (p - 1) + 1
    N = Mx * My

    xs = _axis_coords(nx, p, a, x0)
    ys = _axis_coords(ny, p, a, y0)
    GX, GY = np.meshgrid(np.arange(Mx), np.arange(My))
    gx, gy = GX.ravel(), GY.ravel()
    coords = np.column_stack([xs[gx], ys[gy]])

    # element -> global index, local order iy * p + ix
    E = nx * ny
    cx = np.repeat(np.arange(nx), ny)
    cy = np.tile(np.arange(ny), nx)
    lx = np.tile(np.arange(p), p)
    ly = np.repeat(np.arange(p), p)
    egx = cx[:, None] * (p - 1) + lx[None, :]
    egy = cy[:, None] * (p - 1) + ly[None, :]
    element_node_index = egy * Mx + egx

    on_gamma = (gx == 0) | (gx == Mx - 1) | (gy == 0) | (gy == My - 1)
    on_xline = gx % (p - 1) == 0
    on_yline = gy % (p - 1) == 0
    node_class = np.full(N, INTERIOR, dtype=np.int8)
    node_class[(on_xline | on_yline)] = INTERFACE
    node_class[on_xline & on_yline] = CORNER
    node_class[on_gamma] = DIRICHLET

    node_owner = np.full(N, -1, dtype=np.int64)
    interior_local = np.flatnonzero((lx > 0) & (lx < p - 1) & (ly > 0) & (ly < p - 1))
    node_owner[element_node_index[:, interior_local]] = np.arange(E)[:, None]

    # edges in active order: horizontal edges of column c, then vertical line c+1
    kinds, nodes, elems, cells = [], [], [], []
    v_id = -np.ones((nx + 1, ny), dtype=np.int64)
    h_id = -np.ones((nx, ny + 1), dtype=np.int64)
    k = np.arange(p)
    for c in range(nx):
        for r in range(ny - 1):
            h_id[c, r + 1] = len(kinds)
            kinds.append(HORIZONTAL)
            nodes.append((r + 1) * (p - 1) * Mx + c * (p - 1) + k)
            elems.append((c * ny + r, c * ny + r + 1))
            cells.append((c, r))
        if c < nx - 1:
            line = c + 1
            for r in range(ny):
                v_id[line, r] = len(kinds)
                kinds.append(VERTICAL)
                nodes.append((r * (p - 1) + k) * Mx + line * (p - 1))
                elems.append((c * ny + r, (c + 1) * ny + r))
                cells.append((line, r))
    n_edges = len(kinds)
    edge_kind = np.array(kinds, dtype=np.int8)
    edge_nodes = np.array(nodes, dtype=np.int64).reshape(n_edges, p)
    edge_elements = np.array(elems, dtype=np.int64).reshape(n_edges, 2)
    edge_cell = np.array(cells, dtype=np.int64).reshape(n_edges, 2)

    active_nodes = edge_nodes[:, 1:-1].reshape(-1)
    active_index = np.full(N, -1, dtype=np.int64)
    active_index[active_nodes] = np.arange(active_nodes.size)
    node_owner[edge_nodes[:, 1:-1]] = np.arange(n_edges)[:, None]

    # interior cross points: four incident edges and which end touches the corner
    corner_list, corner_edges, corner_ends = [], [], []
    for line in range(1, nx):
        for m in range(1, ny):
            corner_list.append(m * (p - 1) * Mx + line * (p - 1))
            corner_edges.append((v_id[line, m - 1], v_id[line, m], h_id[line - 1, m], h_id[line, m]))
            corner_ends.append((1, 0, 1, 0))
    corner_nodes = np.array(corner_list, dtype=np.int64)
    corner_edges = np.array(corner_edges, dtype=np.int64).reshape(-1, 4)
    corner_ends = np.array(corner_ends, dtype=np.int64).reshape(-1, 4)

    topo = MeshTopology(
        params=params,
        node_coords=coords,
        node_class=node_class,
        node_owner=node_owner,
        element_node_index=element_node_index,
        element_cell=np.column_stack([cx, cy]),
        edge_kind=edge_kind,
        edge_nodes=edge_nodes,
        edge_elements=edge_elements,
        edge_cell=edge_cell,
        active_nodes=active_nodes,
        active_index=active_index,
        corner_nodes=corner_nodes,
        corner_edges=corner_edges,
        corner_ends=corner_ends,
        boundary_local=_local_boundary_order(p),
        interior_local=interior_local,
    )
    for arr in (coords, node_class, node_owner, element_node_index, edge_nodes,
                active_nodes, active_index):
        arr.setflags(write=False)
    return topo


def node_classification_report(topo):
    """Counts per node class, plus the closed-form expectations."""
    counts = np.bincount(topo.node_class, minlength=4)
    return {
        "N": topo.N,
        "interior": int(counts[INTERIOR]),
        "active": int(counts[INTERFACE]),
        "dirichlet": int(counts[DIRICHLET]),
        "corner": int(counts[CORNER]),
        "active_formula": topo.params.n_active_formula,
        "N_formula": topo.params.N,
    }
