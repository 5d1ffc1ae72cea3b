"""Command-line interface for the reproduction harness.

Subcommands: profile, run-tdse, run-qcle, const-analytic, negativity,
compare, preset (list/run). All outputs are UTF-8 CSV with one-line '#'
header comments, plus the binary field format defined in mqclab.wigner.
The QCLE_LAB_THREADS environment variable caps FFT worker parallelism.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import runner
from .grids import build_grid
from .models import coupling_profile
from .observables import negativity_index


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["dac", "constant"], default="dac")
    p.add_argument("--mass", type=float, default=None, help="bath mass (a.u.)")
    p.add_argument("--d-coupling", type=float, default=1.0, help="constant-model coupling")
    p.add_argument("--gap", type=float, default=0.05, help="constant-model gap (a.u.)")


def _add_packet_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--r0", type=float, default=-15.0)
    p.add_argument("--p0", type=float, default=40.0)
    p.add_argument("--sigma-p", type=float, default=0.0, help="0 means p0/20")
    p.add_argument("--theta", type=float, default=0.0, help="adiabatic mixing angle")
    p.add_argument("--k", type=int, default=2, help="grid points per de Broglie wavelength")
    p.add_argument("--dr-cap", type=float, default=0.05, help="position-spacing cap")


def _config_from_args(args, method: str) -> runner.ExperimentConfig:
    mass = args.mass if args.mass is not None else (2000.0 if args.model == "dac" else 200.0)
    return runner.ExperimentConfig(
        model=args.model,
        mass=mass,
        d_coupling=args.d_coupling,
        gap=args.gap,
        r0=args.r0,
        p0=args.p0,
        sigma_p=args.sigma_p,
        theta=args.theta,
        k=args.k,
        dr_cap=args.dr_cap,
        method=method,
        snapshot_times=tuple(args.snapshot_times or ()),
        max_steps=args.max_steps,
    )


def _cmd_profile(args) -> int:
    cfg = runner.ExperimentConfig(
        model=args.model,
        mass=args.mass if args.mass is not None else (2000.0 if args.model == "dac" else 200.0),
        d_coupling=args.d_coupling,
        gap=args.gap,
    )
    model = cfg.model_spec()
    sigma_p = args.sigma_p if args.sigma_p > 0 else args.p0 / 20.0
    grid = build_grid(args.r0, args.p0, 1.0 / (2.0 * sigma_p), args.k, args.dr_cap)
    from .models import diabatic_potential

    ad = coupling_profile(model, grid)
    v = diabatic_potential(model, grid.r_values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("# diabatic/adiabatic profiles along R\n")
        fh.write("R,V00,V11,V01,E0,E1,d01,g00,F00,F11,F01\n")
        for i, r in enumerate(grid.r_values):
            fh.write(
                f"{r:.17g},{v[i, 0, 0]:.17g},{v[i, 1, 1]:.17g},{v[i, 0, 1]:.17g},"
                f"{ad.e[i, 0]:.17g},{ad.e[i, 1]:.17g},{ad.d01[i]:.17g},"
                f"{ad.g[i, 0, 0]:.17g},{ad.f[i, 0, 0]:.17g},{ad.f[i, 1, 1]:.17g},"
                f"{ad.f[i, 0, 1]:.17g}\n"
            )
    print(f"wrote {out}")
    return 0


def _cmd_run(args, method_prefix: str) -> int:
    method = args.method if method_prefix == "tdse" else "qcle"
    if method_prefix == "tdse":
        method = {"split": "tdse-split", "dvr": "tdse-dvr"}[method]
    cfg = _config_from_args(args, method)
    outdir = runner.run_experiment(cfg, args.out_dir)
    print(f"bundle written to {outdir}")
    return 0


def _cmd_const(args) -> int:
    cfg = runner.ExperimentConfig(
        kind="const-analytic",
        model="constant",
        mass=args.mass if args.mass is not None else 200.0,
        d_coupling=args.d_coupling,
        gap=args.gap,
        p0=args.p0,
        sigma_p=args.sigma_p,
        r0=args.r0,
        theta=args.theta,
        branch=args.branch,
        order=args.order,
        times=tuple(args.times or (0.0,)),
        k=args.k,
        dr_cap=args.dr_cap,
    )
    outdir = runner.run_experiment(cfg, args.out_dir)
    print(f"bundle written to {outdir}")
    return 0


def _cmd_negativity(args) -> int:
    cols = runner._load_csv_columns(Path(args.input))
    numeric = {k: v for k, v in cols.items() if v.dtype.kind == "f"}
    coord_key = next(iter(numeric))
    for name, values in numeric.items():
        if name == coord_key:
            continue
        print(f"{name}: negativity_index = {negativity_index(values):.6g}")
    return 0


def _cmd_compare(args) -> int:
    report, passed = runner.compare_bundles(
        args.bundle_a, args.bundle_b, csv_name=args.csv, threshold=args.threshold
    )
    for key, stats in report.items():
        print(f"{key}: max|diff| = {stats['max_abs']:.6g}, L2 = {stats['l2']:.6g}")
    if args.threshold is not None:
        print("PASS" if passed else "FAIL")
    return 0 if passed else 1


def _cmd_preset(args) -> int:
    if args.action == "list":
        for name in runner.list_presets():
            print(name)
        return 0
    cfg = runner.preset_config(args.name)
    outdir = runner.run_experiment(cfg, args.out_dir)
    print(f"bundle written to {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mqclab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="dump potential/coupling profiles along R")
    _add_model_args(p)
    _add_packet_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_profile)

    for name, help_text in (("run-tdse", "propagate the Schroedinger equation"),
                            ("run-qcle", "propagate the QCLE")):
        p = sub.add_parser(name, help=help_text)
        _add_model_args(p)
        _add_packet_args(p)
        if name == "run-tdse":
            p.add_argument("--method", choices=["split", "dvr"], default="split")
        p.add_argument("--snapshot-times", type=float, nargs="*", default=None)
        p.add_argument("--max-steps", type=int, default=100_000)
        p.add_argument("--out-dir", required=True)
        prefix = "tdse" if name == "run-tdse" else "qcle"
        p.set_defaults(func=lambda a, _pref=prefix: _cmd_run(a, _pref))

    p = sub.add_parser("const-analytic", help="constant-model analytic branches")
    p.add_argument("--branch", choices=["exact", "nonlocal", "marginal-ode", "pert-large", "pert-fourier"], required=True)
    p.add_argument("--order", type=int, default=0)
    p.add_argument("--d-coupling", type=float, required=True)
    p.add_argument("--gap", type=float, required=True)
    p.add_argument("--mass", type=float, default=200.0)
    p.add_argument("--p0", type=float, default=20.0)
    p.add_argument("--sigma-p", type=float, default=2.0)
    p.add_argument("--r0", type=float, default=0.0)
    p.add_argument("--theta", type=float, default=np.pi / 4.0)
    p.add_argument("--times", type=float, nargs="*", default=None)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--dr-cap", type=float, default=0.05)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_const)

    p = sub.add_parser("negativity", help="negativity indices of a marginal CSV")
    p.add_argument("--input", required=True)
    p.set_defaults(func=_cmd_negativity)

    p = sub.add_parser("compare", help="compare two output bundles")
    p.add_argument("bundle_a")
    p.add_argument("bundle_b")
    p.add_argument("--csv", default="observables.csv")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("preset", help="list or run named presets")
    p.add_argument("action", choices=["list", "run"])
    p.add_argument("name", nargs="?")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=_cmd_preset)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
