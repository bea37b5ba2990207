"""Command-line entry point: ``semwave <command> [options]``.

Commands
  simulate   run a configuration file (TOML or JSON)
  converge   one-step error versus polynomial order for the stream-function cases
  bar        wave propagation over the submerged bar with harmonic diagnostics
  mg-bench   iteration counts and solve times of the preconditioned pressure solvers
  table1     iteration counts per tolerance on the 17-wavelength configuration
  streamfn   solve and tabulate a stream-function wave
  config     print a preset or a parsed configuration as canonical JSON

Diagnostics go to stderr; results are written as CSV files.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ..mg_solver import SolverDivergence
from ..wave_theory import StreamFunctionError, WaveSpec, streamfunction_solve, streamfunction_table
from . import experiments as ex
from .config import ConfigError, bar_preset, dump_config, load_config, table1_preset

log = logging.getLogger("semwave")


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _progress(every: int):
    def report(n, state):
        if every and (n + 1) % every == 0:
            log.info("step %d  t=%.5g  max|eta|=%.4e", n + 1, state.t, float(np.abs(state.eta).max()))
    return report


# ---------------------------------------------------------------- commands
def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg.output.dir = args.out
    res = ex.run_simulation(cfg, progress=_progress(args.progress))
    log.info("%s", res.summary())
    for name, path in res.files.items():
        log.info("wrote %s: %s", name, path)
    return 0


def cmd_converge(args) -> int:
    rows = ex.convergence_study(args.orders, args.kh, args.fracs, args.Nx, args.Nz, args.dt_per_period,
                                args.N_sf)
    path = ex.write_convergence(rows, args.out)
    failed = 0
    for kh in args.kh:
        for fr in args.fracs:
            sel = [r for r in rows if r.kh == kh and r.steepness_frac == fr]
            v = ex.spectral_verdict([r.P for r in sel], [r.error for r in sel])
            ok = v["decay_ok"] and v["plateau_ok"]
            failed += not ok
            log.info("kh=%.4g frac=%.2g floor=%.3e decay_ok=%s plateau_ok=%s", kh, fr, v["floor"],
                     v["decay_ok"], v["plateau_ok"])
    log.info("wrote %s", path)
    return 0 if failed == 0 or not args.strict else 1


def cmd_bar(args) -> int:
    cfg = bar_preset(args.t_end)
    cfg.output.dir = args.out
    if args.solver:
        cfg.solver.method = args.solver
    res, diag = ex.bar_benchmark(cfg, progress=_progress(args.progress))
    log.info("%s", res.summary())
    path = Path(args.out) / "harmonics.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "higher_fraction"] + [f"a{j}" for j in range(1, len(diag[0]["amplitudes"]) + 1)])
        for d in diag:
            w.writerow([d["x"], repr(d["higher_fraction"])] + [repr(float(a)) for a in d["amplitudes"]])
            log.info("gauge x=%5.2f  harmonic fraction %.4f", d["x"], d["higher_fraction"])
    log.info("wrote %s", path)
    return 0


def cmd_mg_bench(args) -> int:
    rows = ex.mg_benchmark(args.Nx, args.Px, args.method, args.tol, args.nsteps, args.overlap)
    for r in rows:
        log.info("%s Nx=%d Px=%d dof=%d iterations=%.2f time=%.4gs", r.sweep, r.Nx, r.Px, r.dof,
                 r.iterations, r.time)
    for sweep in ("Nx", "Px"):
        sel = [r for r in rows if r.sweep == sweep]
        if len(sel) > 1:
            log.info("%s sweep: alpha = %.3f", sweep, ex.scaling_exponent([r.dof for r in sel],
                                                                       [r.time for r in sel]))
    log.info("wrote %s", ex.write_bench(rows, args.out))
    return 0


def cmd_table1(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "gmres_norm", "tol", "mean_iterations"])
        for method in args.methods:
            for tol in args.tols:
                m, _ = ex.table1_iterations(tol, method, args.nsteps, args.gmres_norm)
                w.writerow([method, args.gmres_norm if method == "gmres" else "", tol, repr(m)])
                log.info("%s tol=%.0e mean iterations %.2f", method, tol, m)
    log.info("wrote %s", out)
    return 0


def cmd_streamfn(args) -> int:
    if args.kh is not None:
        L = 2.0 * math.pi * args.depth / args.kh
    else:
        L = args.L
    if L is None:
        raise ConfigError("give --kh or --L")
    try:
        spec = WaveSpec(H=args.H, h=args.depth, L=L)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sol = streamfunction_solve(spec, N_sf=args.N)
    log.info("L=%.10g T=%.10g c=%.10g kh=%.6g residual=%.2e", sol.L, sol.T, sol.c, sol.kh, sol.residual)
    tab = streamfunction_table(sol, args.samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, tab, delimiter=",", header="phase,eta,u,w", comments="")
    log.info("wrote %s", out)
    return 0


def cmd_config(args) -> int:
    if args.preset == "bar":
        cfg = bar_preset()
    elif args.preset == "table1":
        cfg = table1_preset()
    else:
        cfg = load_config(args.preset)
    sys.stdout.write(dump_config(cfg) + "\n")
    return 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semwave", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a configuration file")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (overrides output.dir)")
    s.add_argument("--progress", type=int, default=0, help="report every N steps")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("converge", help="one-step spatial convergence study")
    s.add_argument("--orders", type=_ints, default=list(range(2, 17, 2)))
    s.add_argument("--kh", type=_floats, default=list(ex.CONVERGENCE_KH))
    s.add_argument("--fracs", type=_floats, default=list(ex.CONVERGENCE_FRACS))
    s.add_argument("--Nx", type=int, default=20)
    s.add_argument("--Nz", type=int, default=2)
    s.add_argument("--dt-per-period", type=int, default=32000)
    s.add_argument("--N-sf", type=int, default=32, help="stream-function Fourier modes of the reference")
    s.add_argument("--out", default="out/convergence.csv")
    s.add_argument("--strict", action="store_true", help="exit 1 if a case fails the spectral check")
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("bar", help="submerged-bar harmonic generation")
    s.add_argument("--t-end", type=float, default=40.0)
    s.add_argument("--solver", choices=("direct", "pdc", "gmres"))
    s.add_argument("--out", default="out_bar")
    s.add_argument("--progress", type=int, default=500)
    s.set_defaults(func=cmd_bar)

    s = sub.add_parser("mg-bench", help="multigrid scaling sweeps")
    s.add_argument("--Nx", type=_ints, default=[25, 50, 100, 200, 400])
    s.add_argument("--Px", type=_ints, default=[4, 6, 8, 12, 16])
    s.add_argument("--method", choices=("pdc", "gmres"), default="gmres")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--nsteps", type=int, default=1)
    s.add_argument("--overlap", type=int, default=2)
    s.add_argument("--out", default="out/mg_bench.csv")
    s.set_defaults(func=cmd_mg_bench)

    s = sub.add_parser("table1", help="iteration counts per solver tolerance")
    s.add_argument("--methods", type=lambda t: t.split(","), default=["pdc", "gmres"])
    s.add_argument("--tols", type=_floats, default=[1e-4, 1e-6, 1e-8])
    s.add_argument("--nsteps", type=int, default=3)
    s.add_argument("--gmres-norm", choices=("true", "preconditioned"), default="true")
    s.add_argument("--out", default="out/table1.csv")
    s.set_defaults(func=cmd_table1)

    s = sub.add_parser("streamfn", help="stream-function wave table")
    s.add_argument("--H", type=float, required=True)
    s.add_argument("--depth", type=float, default=1.0)
    s.add_argument("--kh", type=float)
    s.add_argument("--L", type=float)
    s.add_argument("--N", type=int, default=32)
    s.add_argument("--samples", type=int, default=64)
    s.add_argument("--out", default="out/streamfn.csv")
    s.set_defaults(func=cmd_streamfn)

    s = sub.add_parser("config", help="print a preset ('bar', 'table1') or a config file as JSON")
    s.add_argument("preset")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, StreamFunctionError) as exc:
        log.error("%s", exc)
        return 2
    except (SolverDivergence, RuntimeError) as exc:
        log.error("run failed: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
