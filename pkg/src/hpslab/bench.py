"""Run configurations, stage timing, sweeps, CSV tables and field images.

Wavenumbers are given either directly or as ``w`` wavelengths across the
unit square (``kappa = 2 pi w``). Points per wavelength use the mean node
spacing, ``ppw = nx (p - 1) / w``.
"""

import csv
import gc
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._validation import ParameterError, SingularBlockError, check_positive_int
from .assembly import (GlobalOperator, assemble_reduced, dirichlet_vector, global_rhs,
                       reconstruct_full_solution)
from .chebyshev import cheb_nodes, interp_matrix
from .leaf import STORAGE_POLICIES, batched_condense, default_workers, sample_fields
from .mesh import MeshParams, build_mesh
from .oracle import dense_factor, dense_solve, densify
from .problems import PRESETS, compute_errors, make_preset
from . import slablu

SOLVERS = ("slablu", "oracle")
PPW_TOL = 0.05

CSV_COLUMNS = ("preset", "p", "nx", "ny", "N", "n_active", "kappa", "ppw", "t_leaf",
               "t_assemble", "t_factor", "t_solve", "t_reconstruct", "relerr_res",
               "relerr_true", "mem_bytes")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "analytic-helmholtz"
    p: int = 16
    nx: Optional[int] = None
    ny: Optional[int] = None
    N_target: Optional[int] = None
    kappa: Optional[float] = None
    wavelengths: Optional[float] = None
    ppw: Optional[float] = None
    solver: str = "slablu"
    slab_width: Optional[int] = None
    workers: Optional[int] = None
    storage_policy: str = "recompute"
    slab_storage_policy: str = "store"
    out_dir: str = "."
    seed: int = 0
    repeats: int = 1
    b_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ParameterError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        if self.solver not in SOLVERS:
            raise ParameterError(f"solver must be one of {SOLVERS}")
        if self.storage_policy not in STORAGE_POLICIES:
            raise ParameterError(f"storage_policy must be one of {STORAGE_POLICIES}")
        check_positive_int(self.p, "p", minimum=4)
        check_positive_int(self.repeats, "repeats")
        fixed_k = self.kappa is not None or self.wavelengths is not None
        if self.nx is None and self.N_target is None and not (fixed_k and self.ppw is not None):
            raise ParameterError("give nx, N_target, or a wavenumber together with ppw")

    def resolve(self):
        """Concrete ``(nx, ny, kappa, ppw)``.

        ``nx`` comes from ``N_target`` when not given. If the wavenumber is
        not fixed, it is chosen to hit ``ppw`` exactly; if both the wavenumber
        and ``ppw`` are fixed, ``nx`` is rounded to the nearest match and the
        result must be within 5% of the request. With nothing fixed, 10
        points per wavelength is used.
        """
        p = self.p
        nx = self.nx
        target_ppw = self.ppw
        if self.kappa is not None:
            w = self.kappa / (2 * math.pi)
        elif self.wavelengths is not None:
            w = float(self.wavelengths)
        else:
            w = None
        if w is None and target_ppw is None:
            target_ppw = 10.0
        if nx is None:
            if self.N_target is not None:
                nx = round((math.sqrt(self.N_target) - 1) / (p - 1))
            else:
                nx = round(target_ppw * w / (p - 1))
            nx = max(2, int(nx))
        ny = nx if self.ny is None else self.ny
        if w is None:
            w = nx * (p - 1) / target_ppw
        kappa = float(self.kappa) if self.kappa is not None else 2 * math.pi * w
        ppw = nx * (p - 1) / w
        if target_ppw is not None and abs(ppw - target_ppw) > PPW_TOL * target_ppw:
            raise ParameterError(f"derived ppw {ppw:.3g} is not within 5% of requested {target_ppw}")
        return int(nx), int(ny), kappa, ppw


@dataclass(eq=False)
class RunRecord:
    config: RunConfig
    p: int
    nx: int
    ny: int
    N: int
    n_active: int
    kappa: float
    ppw: float
    timings: dict
    errors: object
    mem_bytes: int
    solution: Optional[np.ndarray] = field(default=None, repr=False)
    reduced_solution: Optional[np.ndarray] = field(default=None, repr=False)
    factorization: object = field(default=None, repr=False)
    topo: object = field(default=None, repr=False)

    @property
    def build_time(self):
        return self.timings["leaf"] + self.timings["assemble"] + self.timings["factor"]

    @property
    def solve_time(self):
        # under "recompute" reconstruction refactors every leaf, so leaf work is in both totals
        return self.timings["solve"] + self.timings["reconstruct"]

    def row(self):
        t = self.timings
        e = self.errors
        return {"preset": self.config.preset, "p": self.p, "nx": self.nx, "ny": self.ny,
                "N": self.N, "n_active": self.n_active, "kappa": self.kappa, "ppw": self.ppw,
                "t_leaf": t["leaf"], "t_assemble": t["assemble"], "t_factor": t["factor"],
                "t_solve": t["solve"], "t_reconstruct": t["reconstruct"],
                "relerr_res": e.relerr_res, "relerr_true": e.relerr_true,
                "mem_bytes": self.mem_bytes}


def _timed(fn, repeats=1):
    # like timeit: collect first and keep the collector out of the timed region
    best, out = math.inf, None
    enabled = gc.isenabled()
    for _ in range(repeats):
        out = None
        gc.collect()
        gc.disable()
        try:
            t0 = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - t0)
        finally:
            if enabled:
                gc.enable()
    return out, best


class _DenseReduced:
    """Dense reduced solve, timed like a factorization."""

    def __init__(self, reduced):
        self.system = densify(reduced)
        self.factors = dense_factor(self.system)

    @property
    def stored_bytes(self):
        return self.factors[0].nbytes + self.factors[1].nbytes

    def solve(self, rhs):
        return dense_solve(replace(self.system, rhs=np.asarray(rhs, dtype=float)), self.factors)


def solve_problem(topo, spec, *, solver="slablu", slab_width=None, workers=None,
                  storage_policy="recompute", slab_storage_policy="store", repeats=1):
    """Full pipeline on a built mesh; returns ``(u, u_reduced, factorization, leaves, timings, b, f)``."""
    workers = default_workers() if workers is None else int(workers)
    b, f = sample_fields(topo, spec)
    g = dirichlet_vector(topo, spec)
    timings = {}
    leaves, timings["leaf"] = _timed(
        lambda: batched_condense(topo, spec, f, workers=workers, storage_policy=storage_policy, b=b),
        repeats)
    reduced, timings["assemble"] = _timed(lambda: assemble_reduced(topo, leaves, spec, g=g))
    if solver == "slablu":
        part = slablu.partition_slabs(topo, reduced, slab_width)
        fact, timings["factor"] = _timed(
            lambda: slablu.factor(reduced, part, workers=workers, storage_policy=slab_storage_policy),
            repeats)
    else:
        fact, timings["factor"] = _timed(lambda: _DenseReduced(reduced), repeats)
    u_red, timings["solve"] = _timed(lambda: fact.solve(reduced.rhs), repeats)
    u, timings["reconstruct"] = _timed(
        lambda: reconstruct_full_solution(topo, leaves, u_red, spec, f=f, g=g, workers=workers))
    return u, u_red, fact, leaves, timings, b, f


def run_single(config, keep=False):
    """Mesh, condense, assemble, factor, solve, reconstruct and measure errors."""
    nx, ny, kappa, ppw = config.resolve()
    topo = build_mesh(MeshParams(nx, ny, config.p))
    spec = make_preset(config.preset, kappa, **config.b_params)
    try:
        u, u_red, fact, leaves, timings, b, f = solve_problem(
            topo, spec, solver=config.solver, slab_width=config.slab_width,
            workers=config.workers, storage_policy=config.storage_policy,
            slab_storage_policy=config.slab_storage_policy, repeats=config.repeats)
    except SingularBlockError as exc:
        exc.args = (f"{exc.args[0]} [kappa={kappa}, p={config.p}, nx={nx}, ny={ny}]",)
        raise
    op = GlobalOperator(topo, spec, b=b)
    rhs = global_rhs(topo, spec, f=f, g=dirichlet_vector(topo, spec))
    errors = compute_errors(spec, u, op, rhs, coords=topo.node_coords)
    mem = fact.stored_bytes
    if leaves.lu is not None:
        mem += leaves.lu.nbytes + leaves.piv.nbytes
    return RunRecord(config=config, p=config.p, nx=nx, ny=ny, N=topo.N, n_active=topo.n_active,
                     kappa=kappa, ppw=ppw, timings=timings, errors=errors, mem_bytes=int(mem),
                     solution=u if keep else None, reduced_solution=u_red if keep else None,
                     factorization=fact if keep else None, topo=topo if keep else None)


@dataclass(eq=False)
class SweepResult:
    records: list
    summary: dict


def _fixed_n_config(base, p):
    # hold N (and ppw when the wavenumber is free) as p changes
    if base.N_target is not None:
        N = base.N_target
    else:
        N = (base.nx * (base.p - 1) + 1) ** 2
    return replace(base, p=p, nx=None, ny=None, N_target=N)


def run_p_sweep(base, p_list):
    """One run per ``p`` at roughly fixed ``N``; reports the factor-time spread."""
    if not p_list or any(int(p) < 4 for p in p_list):
        raise ParameterError("p_list must be nonempty with every p >= 4")
    records = [run_single(_fixed_n_config(base, int(p))) for p in p_list]
    tf = [r.timings["factor"] for r in records]
    summary = {"factor_ratio": max(tf) / min(tf),
               "relerr_true": [r.errors.relerr_true for r in records],
               "n_active": [r.n_active for r in records]}
    return SweepResult(records, summary)


def loglog_slope(x, y):
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def run_scaling(base, N_list):
    """Runs at increasing ``N`` (ppw held by recomputing the wavenumber) and fitted slopes."""
    N_list = list(N_list)
    if len(N_list) < 2 or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ParameterError("N_list must be ascending with at least two entries")
    records = [run_single(replace(base, kappa=None, wavelengths=None, nx=None, ny=None,
                                  N_target=int(N))) for N in N_list]
    Ns = [r.N for r in records]
    slopes = {stage: loglog_slope(Ns, [r.timings[stage] for r in records])
              for stage in ("leaf", "factor", "solve")}
    return SweepResult(records, {"slopes": slopes})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.5e}"
    return str(v)


def emit_csv(records, path):
    """Write one header row and one row per record."""
    if not records:
        raise ParameterError("emit_csv needs at least one record")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in records:
                row = r.row()
                w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc
    return path


def _axis_weights(n_el, p, a, origin, t):
    """Element index and barycentric rows for physical coordinates ``t`` along one axis."""
    grid = cheb_nodes(p)
    e = np.clip(np.floor((t - origin) / a).astype(int), 0, n_el - 1)
    local = np.clip(2.0 * (t - origin - e * a) / a - 1.0, -1.0, 1.0)
    return e, interp_matrix(grid, local)


def evaluate_field(topo, values, points):
    """Evaluate the piecewise polynomial ``values`` (full grid) at arbitrary points."""
    p, a = topo.p, topo.a
    x0, x1, y0, y1 = topo.params.domain
    P = np.asarray(points, dtype=float)
    if np.any(P[:, 0] < x0 - 1e-12) or np.any(P[:, 0] > x1 + 1e-12) \
            or np.any(P[:, 1] < y0 - 1e-12) or np.any(P[:, 1] > y1 + 1e-12):
        raise ParameterError("points must lie inside the domain")
    ex, Wx = _axis_weights(topo.nx, p, a, x0, P[:, 0])
    ey, Wy = _axis_weights(topo.ny, p, a, y0, P[:, 1])
    U = np.asarray(values, dtype=float)[topo.element_node_index].reshape(-1, p, p)
    Ue = U[topo.element_id(ex, ey)]
    return np.einsum("ni,nij,nj->n", Wy, Ue, Wx)


def _resample(topo, values, width, height):
    p, a = topo.p, topo.a
    x0, x1, y0, y1 = topo.params.domain
    xs = x0 + (np.arange(width) + 0.5) * (x1 - x0) / width
    ys = y1 - (np.arange(height) + 0.5) * (y1 - y0) / height  # image rows run top to bottom
    ex, Wx = _axis_weights(topo.nx, p, a, x0, xs)
    ey, Wy = _axis_weights(topo.ny, p, a, y0, ys)
    U = np.asarray(values, dtype=float)[topo.element_node_index].reshape(-1, p, p)
    img = np.empty((height, width))
    for cx in range(topo.nx):
        cols = np.flatnonzero(ex == cx)
        if not cols.size:
            continue
        for cy in range(topo.ny):
            rows = np.flatnonzero(ey == cy)
            if rows.size:
                img[np.ix_(rows, cols)] = Wy[rows] @ U[topo.element_id(cx, cy)] @ Wx[cols].T
    return img


def diverging_colors(img):
    """Blue-white-red map, symmetric about zero, as uint8 RGB."""
    m = np.abs(img).max()
    t = img / m if m > 0 else np.zeros_like(img)
    t = np.clip(t, -1.0, 1.0)
    rgb = np.empty(img.shape + (3,))
    pos = np.clip(t, 0, None)
    neg = np.clip(-t, 0, None)
    rgb[..., 0] = 1.0 - neg
    rgb[..., 1] = 1.0 - pos - neg
    rgb[..., 2] = 1.0 - pos
    return np.round(255 * np.clip(rgb, 0, 1)).astype(np.uint8)


def render_field(topo, values, resolution, path):
    """Resample to a uniform pixel grid and write a binary PPM image."""
    if np.isscalar(resolution):
        width = height = int(resolution)
    else:
        width, height = map(int, resolution)
    check_positive_int(width, "width")
    check_positive_int(height, "height")
    rgb = diverging_colors(_resample(topo, values, width, height))
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
            fh.write(rgb.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc
    return path


def read_ppm(path):
    """Parse a binary PPM written by :func:`render_field` into an (h, w, 3) array."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM")
    width, height = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width, 3)
