"""Command-line entry point: ``hpslab {single,p-sweep,scaling,render} [flags]``.

Any flag may also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment). Flags given on the command line win.
"""

import argparse
import os
import sys

from .bench import (RunConfig, emit_csv, render_field, run_p_sweep, run_scaling, run_single)
from .leaf import STORAGE_POLICIES
from .problems import PRESETS

COMMANDS = ("single", "p-sweep", "scaling", "render")


def _int_list(text):
    return [int(float(t)) for t in text.replace(",", " ").split()]


def _b_param(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), float(value)


def read_config_file(path):
    """Turn ``key = value`` lines into equivalent command-line tokens."""
    tokens = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip().replace("_", "-")
            value = value.strip()
            if key == "b-param":
                tokens += ["--b-param", value]
            else:
                tokens += [f"--{key}", value]
    return tokens


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=PRESETS, default="analytic-helmholtz")
    common.add_argument("--p", type=int, default=16, help="nodes per element side")
    common.add_argument("--nx", type=int)
    common.add_argument("--ny", type=int)
    common.add_argument("--kappa", type=float, help="absolute wavenumber")
    common.add_argument("--wavelengths", type=float, help="wavelengths across the unit square")
    common.add_argument("--ppw", type=float, help="target points per wavelength")
    common.add_argument("--solver", choices=("slablu", "oracle"), default="slablu")
    common.add_argument("--slab-width", type=int, help="elements per slab")
    common.add_argument("--workers", type=int)
    common.add_argument("--storage-policy", choices=STORAGE_POLICIES, default="recompute")
    common.add_argument("--out-dir", default=".")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--repeats", type=int, default=1, help="time each stage as best of k")
    common.add_argument("--b-param", type=_b_param, action="append", default=[],
                        help="crystal field override, e.g. depth=0.8")
    common.add_argument("--config", help="key = value file; command-line flags override it")

    parser = argparse.ArgumentParser(prog="hpslab", description="Spectral-element Helmholtz solver bench")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("single", parents=[common], help="one run, one CSV row")
    ps = sub.add_parser("p-sweep", parents=[common], help="vary p at fixed N")
    ps.add_argument("--p-list", type=_int_list, default=[8, 16, 32])
    ps.add_argument("--N-target", type=int, default=100_000)
    sc = sub.add_parser("scaling", parents=[common], help="vary N at fixed p and ppw")
    sc.add_argument("--N-list", type=_int_list, default=[15_000, 60_000, 240_000])
    rd = sub.add_parser("render", parents=[common], help="one run plus a PPM image of the field")
    rd.add_argument("--resolution", type=int, default=512)
    return parser


def _expand_config(argv):
    """Insert config-file tokens right after the subcommand so explicit flags come later."""
    argv = list(argv)
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv
    pos = next((i for i, tok in enumerate(argv) if tok in COMMANDS), None)
    if pos is None:
        return argv
    return argv[:pos + 1] + read_config_file(path) + argv[pos + 1:]


def config_from_args(args):
    return RunConfig(preset=args.preset, p=args.p, nx=args.nx, ny=args.ny,
                     N_target=getattr(args, "N_target", None), kappa=args.kappa,
                     wavelengths=args.wavelengths, ppw=args.ppw, solver=args.solver,
                     slab_width=args.slab_width, workers=args.workers,
                     storage_policy=args.storage_policy, out_dir=args.out_dir, seed=args.seed,
                     repeats=args.repeats, b_params=dict(args.b_param))


def _print_record(r):
    e = r.errors
    true = "" if e.relerr_true is None else f"  relerr_true={e.relerr_true:.3e}"
    print(f"p={r.p} nx={r.nx} N={r.N} n_active={r.n_active} kappa={r.kappa:.4g} ppw={r.ppw:.3g}"
          f"  build={r.build_time:.3f}s solve={r.solve_time:.3f}s"
          f"  relerr_res={e.relerr_res:.3e}{true}")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(_expand_config(argv))
    os.makedirs(args.out_dir, exist_ok=True)
    out = lambda name: os.path.join(args.out_dir, name)

    if args.command == "single":
        args.N_target = None
        rec = run_single(config_from_args(args))
        _print_record(rec)
        print(emit_csv([rec], out("single.csv")))
    elif args.command == "p-sweep":
        args.nx = args.ny = None
        res = run_p_sweep(config_from_args(args), args.p_list)
        for r in res.records:
            _print_record(r)
        print(f"factor time max/min over p: {res.summary['factor_ratio']:.3f}")
        print(emit_csv(res.records, out("p_sweep.csv")))
    elif args.command == "scaling":
        args.N_target = args.N_list[0]
        res = run_scaling(config_from_args(args), args.N_list)
        for r in res.records:
            _print_record(r)
        for stage, slope in res.summary["slopes"].items():
            print(f"{stage} time slope vs N: {slope:.3f}")
        print(emit_csv(res.records, out("scaling.csv")))
    else:
        args.N_target = None
        rec = run_single(config_from_args(args), keep=True)
        _print_record(rec)
        print(render_field(rec.topo, rec.solution, args.resolution, out("field.ppm")))
        print(emit_csv([rec], out("render.csv")))
    return 0


if __name__ == "__main__":
    sys.exit(main())
