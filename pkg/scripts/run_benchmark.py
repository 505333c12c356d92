"""March the T-joint load cycle with one or both solvers and print a summary table.

    python scripts/run_benchmark.py --solver both --output out/benchmark
"""

from __future__ import annotations

import argparse
import dataclasses
from pathlib import Path

import numpy as np

from hystfem.cli import benchmark_config_path, execute, write_outputs
from hystfem.config import load_config
from hystfem.driver import hysteresis_work, steady_window


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=str(benchmark_config_path()))
    ap.add_argument("--solver", choices=["newton", "bcd", "both"], default="newton")
    ap.add_argument("--output", default="out/benchmark")
    args = ap.parse_args()
    cfg = load_config(args.config)
    solvers = ["newton", "bcd"] if args.solver == "both" else [args.solver]
    print(f"{'solver':8s} {'dof':>6s} {'avg it':>8s} {'time s':>8s} {'loss J':>10s} {'[1,2] J':>10s}")
    for s in solvers:
        r = execute(dataclasses.replace(cfg, solver=s), log=lambda *_: None)
        write_outputs(r, Path(args.output) / s)
        print(f"{s:8s} {r.dof:6d} {r.avg_iterations:8.2f} {r.wall_time:8.1f} "
              f"{r.losses.total:10.3f} {r.losses.total_between(1.0, 2.0):10.3f}")
        idx = steady_window(r.times)
        for p, name in enumerate(r.probe_names):
            B = r.probe_B[idx, p]
            print(f"    {name}: peak |B| {np.linalg.norm(B, axis=1).max():.3f} T, "
                  f"loop work {hysteresis_work(r.probe_H[idx[:-1], p], B[:-1]):.1f} J/m^3")


if __name__ == "__main__":
    main()
