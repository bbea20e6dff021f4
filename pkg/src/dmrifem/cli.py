"""Command-line interface.

Subcommands:
  run      simulate a JSON configuration, write CSV and figure outputs
  oracle   finite-difference interval reference (regression values)
  convert  Gmsh MSH 2.2 -> native mesh format

`run` accepts the script-style override flags -b, -d, -D, -k, -p, -gdir,
-K and --dt on top of the config file; -M only cross-checks that the
configuration is (or is not) multi-compartment.

Exit codes: 0 ok, 2 configuration error, 3 mesh/parse error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, DmrifemError, MeshError, MeshFormatError, \
    MshParseError, SolverFailure
from .msh import load_native, read_msh, save_native
from .oracle import FdConfig, fd_reference_signal
from .sequences import PROFILE_BUILDERS
from .signals import write_csv
from .stepper import build_problem, fem_system_for, run_simulation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MESH = 3
EXIT_SOLVER = 4


def _build_parser():
    parser = argparse.ArgumentParser(prog="dmrifem",
                                     description="Bloch-Torrey finite-element "
                                                 "diffusion MRI simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulation from a JSON config")
    run.add_argument("config", help="path to the JSON configuration")
    run.add_argument("-b", nargs="+", type=float, default=None,
                     help="override b-values (s/mm^2)")
    run.add_argument("-d", type=float, default=None, help="override delta (us)")
    run.add_argument("-D", type=float, default=None, help="override Delta (us)")
    run.add_argument("-k", "--dt", dest="dt", type=float, default=None,
                     help="override the time step (us)")
    run.add_argument("-p", type=float, default=None,
                     help="override the interface permeability (m/s)")
    run.add_argument("-K", type=float, default=None,
                     help="override every compartment diffusivity (mm^2/s)")
    run.add_argument("-gdir", nargs=3, type=float, default=None,
                     help="override the gradient direction")
    run.add_argument("-M", type=int, choices=(0, 1), default=None,
                     help="cross-check the multi-compartment setting")
    run.add_argument("-o", "--csv", dest="csv", default=None,
                     help="override the CSV output path")
    run.add_argument("--svg", default=None, help="override the figure output path")
    run.add_argument("--logy", action="store_true", help="log-scale attenuation axis")

    orc = sub.add_parser("oracle", help="finite-difference interval reference")
    orc.add_argument("--bounds", nargs=2, type=float, required=True,
                     metavar=("X0", "X1"), help="interval bounds (um)")
    orc.add_argument("--n", type=int, default=1001, help="total grid points")
    orc.add_argument("--dt", type=float, default=50.0, help="time step (us)")
    orc.add_argument("--type", default="pgse", choices=sorted(PROFILE_BUILDERS))
    orc.add_argument("-d", "--delta", dest="delta", type=float, required=True)
    orc.add_argument("-D", "--Delta", dest="Delta", type=float, required=True)
    orc.add_argument("--nosc", type=int, default=1, help="OGSE oscillation count")
    orc.add_argument("--ramp", type=float, default=None, help="trapezoid ramp (us)")
    orc.add_argument("-b", nargs="+", type=float, required=True, help="b-values")
    orc.add_argument("--diff", nargs="+", type=float, default=[3e-3],
                     help="per-sub-interval D (mm^2/s)")
    orc.add_argument("--T2", nargs="+", type=float, default=None,
                     help="per-sub-interval T2 (us)")
    orc.add_argument("--ic", nargs="+", type=float, default=None,
                     help="per-sub-interval initial values")
    orc.add_argument("--interface", nargs=2, type=float, action="append",
                     default=[], metavar=("POS", "KAPPA"),
                     help="interface position (um) and permeability (m/s)")
    orc.add_argument("-o", "--csv", dest="csv", default=None)

    conv = sub.add_parser("convert", help="convert Gmsh MSH 2.2 to native format")
    conv.add_argument("input", help="input .msh or native file")
    conv.add_argument("output", help="output native mesh path")
    return parser


def _apply_run_overrides(raw: dict, args) -> dict:
    if args.d is not None:
        raw.setdefault("sequence", {})["delta"] = args.d
    if args.D is not None:
        raw.setdefault("sequence", {})["Delta"] = args.D
    if args.dt is not None:
        raw.setdefault("time", {})["dt"] = args.dt
    if args.p is not None:
        raw["kappa"] = args.p
    if args.b is not None:
        raw.setdefault("gradient", {})["b"] = list(args.b)
        raw.get("gradient", {}).pop("g", None)
    if args.gdir is not None:
        raw.setdefault("gradient", {})["direction"] = list(args.gdir)
    if args.K is not None:
        for entry in raw.get("compartments", {}).values():
            entry["D"] = args.K
    if args.csv is not None:
        raw.setdefault("output", {})["csv"] = args.csv
    if args.svg is not None:
        raw.setdefault("output", {})["svg"] = args.svg
    if args.logy:
        raw.setdefault("output", {})["logy"] = True
    return raw


def _execute_run(cfg: RunConfig, expects_multi):
    problem = build_problem(cfg.mesh, cfg.marker, cfg.compartments,
                            kappa=cfg.kappa, bc=cfg.bc)
    multi = problem.layout.mode == "pufem"
    if expects_multi is not None and bool(expects_multi) != multi:
        raise ConfigError(
            f"-M {int(expects_multi)} given but the compartment table is "
            f"{'multi' if multi else 'single'}-compartment")
    mode = "strong" if cfg.bc == "periodic_strong" else "weak"
    system = fem_system_for(problem, cfg.direction / np.linalg.norm(cfg.direction), mode)
    records = run_simulation(problem, system, cfg.profile, cfg.gradient_specs(),
                             cfg.stepper, mode=mode)
    out = cfg.outputs
    if out.get("csv"):
        write_csv(records, out["csv"])
    if out.get("svg"):
        from .plotting import attenuation_figure

        attenuation_figure(records, out["svg"], logy=bool(out.get("logy", False)))
    if out.get("waveform_svg"):
        from .plotting import waveform_figure

        waveform_figure(cfg.profile, out["waveform_svg"])
    for r in records:
        print(f"b={r.b:.6g}  g={r.g:.6g}  S={r.S.real:.9g}{r.S.imag:+.9g}j  "
              f"attenuation={r.attenuation:.9g}")
    return EXIT_OK


def _cmd_run(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(raw, dict):
        print("error: config must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    _apply_run_overrides(raw, args)
    cfg = load_config(data=raw)
    return _execute_run(cfg, args.M)


def _cmd_oracle(args) -> int:
    from .sequences import g_from_b
    from .signals import SignalRecord

    kind = args.type
    if kind in ("cos_ogse", "sin_ogse"):
        profile = PROFILE_BUILDERS[kind](args.delta, args.Delta, args.nosc)
    elif kind in ("trap_pgse", "double_trap_pgse"):
        if args.ramp is None:
            raise ConfigError("trapezoidal profiles need --ramp")
        profile = PROFILE_BUILDERS[kind](args.delta, args.Delta, args.ramp)
    else:
        profile = PROFILE_BUILDERS[kind](args.delta, args.Delta)
    nsub = len(args.interface) + 1
    diff = args.diff if len(args.diff) == nsub else [args.diff[0]] * nsub
    records = []
    for b in args.b:
        cfg = FdConfig(x0=args.bounds[0], x1=args.bounds[1], n=args.n, dt=args.dt,
                       D=diff, profile=profile, g=g_from_b(profile, b),
                       T2=args.T2, interfaces=[tuple(i) for i in args.interface],
                       ic=args.ic)
        rec = fd_reference_signal(cfg)
        records.append(rec)
        print(f"b={rec.b:.6g}  g={rec.g:.6g}  S={rec.S.real:.9g}{rec.S.imag:+.9g}j  "
              f"attenuation={rec.attenuation:.9g}")
    if args.csv:
        write_csv(records, args.csv)
    return EXIT_OK


def _cmd_convert(args) -> int:
    if args.input.endswith(".msh"):
        res = read_msh(args.input)
        mesh, marker = res.mesh, res.marker
    else:
        mesh, marker = load_native(args.input)
    save_native(args.output, mesh, marker)
    print(f"wrote {args.output}: {mesh.num_vertices} vertices, "
          f"{mesh.num_cells} cells (dim {mesh.topo_dim} in {mesh.embed_dim})")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        return _cmd_convert(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MshParseError, MeshFormatError, MeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except SolverFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DmrifemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
