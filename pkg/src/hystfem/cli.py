"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure, 4 I/O
failure, 5 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import verify as verify_mod
from .config import ConfigError, RunConfig, dump_config, load_config
from .driver import CycleError, CycleResult, run_cycle, write_losses_csv, write_probes_csv, write_summary_csv
from .material import DomainError, LocalSolveError, MaterialModel, cell_update_H, local_polarization_update
from .mesh import Mesh, MeshError, euler_characteristic, label_counts, n_free_nodes
from .solvers import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO, EXIT_VERIFY = 0, 2, 3, 4, 5


def benchmark_config_path() -> Path:
    return Path(str(resources.files("hystfem").joinpath("data/benchmark.ini")))


def _load(path: str | None) -> RunConfig:
    return load_config(path if path is not None else benchmark_config_path())


def _with_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    kw = {}
    if getattr(args, "solver", None):
        kw["solver"] = args.solver
    if getattr(args, "output", None):
        kw["output"] = Path(args.output)
    if getattr(args, "refine", None) is not None:
        if args.refine < 0:
            raise ConfigError("--refine must be non-negative")
        kw["mesh"] = dataclasses.replace(cfg.mesh, refine=args.refine)
    return dataclasses.replace(cfg, **kw) if kw else cfg


def execute(cfg: RunConfig, log=print) -> CycleResult:
    mesh = cfg.mesh.build()
    m = cfg.material.build()
    n = cfg.cycle.n_steps

    def progress(step: int, rep) -> None:
        if step == n or step % max(1, n // 10) == 0:
            log(f"  step {step}/{n}: {rep.iterations} iterations")

    return run_cycle(mesh, m, cfg.cycle, cfg.probes, solver=cfg.solver, newton=cfg.newton, bcd=cfg.bcd,
                     depth=cfg.depth, on_step=progress)


def write_outputs(result: CycleResult, out: Path, timings: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_losses_csv(out / "losses.csv", result, timings)
    write_probes_csv(out / "probes.csv", result)
    write_summary_csv(out / "summary.csv", [result], timings)


# ---------------------------------------------------------------- subcommands


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _with_overrides(_load(args.config), args)
    print(f"{cfg.solver} on {cfg.cycle.n_steps} steps, output {cfg.output}")
    result = execute(cfg)
    write_outputs(result, cfg.output, timings=not args.deterministic)
    print(f"dof {result.dof}, avg iterations {result.avg_iterations:.2f}, "
          f"loss {result.losses.total:.4f} J, {result.wall_time:.1f} s")
    return EXIT_OK


def cmd_convergence(args: argparse.Namespace) -> int:
    cfg = _with_overrides(_load(args.config), args)
    results = []
    for level in args.levels:
        c = dataclasses.replace(cfg, mesh=dataclasses.replace(cfg.mesh, refine=level))
        print(f"level {level}")
        r = execute(c)
        print(f"  dof {r.dof}, avg iterations {r.avg_iterations:.2f}, loss {r.losses.total:.4f} J, {r.wall_time:.1f} s")
        results.append(r)
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_summary_csv(cfg.output / "summary.csv", results, timings=not args.deterministic)
    return EXIT_OK


def bh_loop(m: MaterialModel, drive: str, amplitude: float, n_steps: int, periods: float,
            ) -> list[tuple[float, ...]]:
    """Colinear sinusoidal drive of one material point: rows (t, H, B, J_1..J_K, loss)."""
    if not (math.isfinite(amplitude) and amplitude >= 0):
        raise ConfigError("amplitude must be finite and non-negative")
    if drive not in ("H", "B"):
        raise ConfigError("drive must be H or B")
    J = np.zeros((m.K, 2))
    rows = []
    for i in range(1, n_steps + 1):
        t = periods * i / n_steps
        x = amplitude * math.sin(2 * math.pi * t)
        if drive == "H":
            H = np.array([x, 0.0])
            Jn = np.stack([cell_update_H(H, J[k], p) for k, p in enumerate(m.cells)])
            B = H / m.nu0 + Jn.sum(axis=0)
        else:
            B = np.array([x, 0.0])
            Jn = local_polarization_update(B, J, m, J0=J)
            H = m.nu0 * (B - Jn.sum(axis=0))
        loss = float(np.sum(m.chi * np.linalg.norm(Jn - J, axis=-1)))
        J = Jn
        rows.append((t, H[0], B[0], *J[:, 0], loss))
    return rows


def cmd_bh_curve(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    m = cfg.material.build()
    if args.chi_zero:
        m = MaterialModel(tuple(p.with_(chi=0.0) for p in m.cells), m.nu0)
    rows = bh_loop(m, args.drive, args.amplitude, args.steps, args.periods)
    out = sys.stdout if args.output in (None, "-") else open(args.output, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(["t", "H", "B"] + [f"J_{k + 1}" for k in range(m.K)] + ["loss"])
        for r in rows:
            w.writerow([f"{v:.17g}" for v in r])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    print(f"{'check':62s} {'value':>10s} {'tol':>8s} {'time':>7s}")

    def show(c: verify_mod.Check) -> None:
        print(f"{c.name:62s} {c.value:10.3e} {c.tol:8.0e} {c.seconds:6.1f}s  {'ok' if c.passed else 'FAIL'}", flush=True)

    checks = verify_mod.run_checks(args.level, fault=args.inject_fault, report=show)
    failed = [c for c in checks if not c.passed]
    if failed:
        print(f"FAILED: {failed[0].name}", file=sys.stderr)
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def cmd_print_config(args: argparse.Namespace) -> int:
    cfg = RunConfig() if args.config is None and args.defaults else _load(args.config)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def mesh_summary(mesh: Mesh) -> dict[str, object]:
    counts = label_counts(mesh)
    return {
        "nodes": mesh.n_nodes,
        "triangles": mesh.n_triangles,
        "free_dof": n_free_nodes(mesh),
        "area_m2": float(np.sum(mesh.areas())),
        "euler_characteristic": euler_characteristic(mesh),
        "walls": ",".join(f"{lb}:{counts[lb]}" for lb in mesh.wall_labels),
        "gates": ",".join(f"{lb}:{counts[lb]}" for lb in mesh.gate_labels),
    }


def cmd_mesh_info(args: argparse.Namespace) -> int:
    cfg = _with_overrides(_load(args.config), args)
    for k, v in mesh_summary(cfg.mesh.build()).items():
        print(f"{k} = {v}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hystfem", description="2D magnetoquasistatics with vector hysteresis")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", nargs="?", help="INI run configuration (default: shipped benchmark)")

    p = sub.add_parser("run", help="march the load cycle and write losses/probes/summary CSVs")
    add_config(p)
    p.add_argument("--solver", choices=["newton", "bcd"])
    p.add_argument("--output", help="output directory")
    p.add_argument("--refine", type=int, help="uniform refinements of the configured mesh")
    p.add_argument("--deterministic", action="store_true", help="write zero wall times so reruns are identical")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("convergence-study", help="run on several refinement levels, one summary row each")
    add_config(p)
    p.add_argument("--levels", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--solver", choices=["newton", "bcd"])
    p.add_argument("--output")
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("bh-curve", help="drive one material point with a sinusoid and print the loop as CSV")
    add_config(p)
    p.add_argument("--drive", choices=["H", "B"], default="H")
    p.add_argument("--amplitude", type=float, default=200.0, help="A/m for H drive, T for B drive")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--periods", type=float, default=2.0)
    p.add_argument("--chi-zero", action="store_true", help="drop all pinning (anhysteretic curve)")
    p.add_argument("--output", help="CSV path, '-' for stdout")
    p.set_defaults(func=cmd_bh_curve)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("level", nargs="?", choices=["quick", "full"], default="quick")
    p.add_argument("--inject-fault", choices=["gradient"], help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("print-config", help="print a configuration with all defaults filled in")
    add_config(p)
    p.add_argument("--defaults", action="store_true", help="built-in defaults instead of the shipped benchmark")
    p.set_defaults(func=cmd_print_config)

    p = sub.add_parser("mesh-info", help="mesh statistics")
    add_config(p)
    p.add_argument("--refine", type=int)
    p.set_defaults(func=cmd_mesh_info)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MeshError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CycleError, SolverError, LocalSolveError, DomainError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
