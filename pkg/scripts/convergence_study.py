"""Newton on successive uniform refinements: dof, iterations, losses and their changes.

    python scripts/convergence_study.py --levels 0 1 2
"""

from __future__ import annotations

import argparse
import dataclasses
from pathlib import Path

from hystfem.cli import benchmark_config_path, execute
from hystfem.config import load_config
from hystfem.driver import write_summary_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--solver", choices=["newton", "bcd"], default="newton")
    ap.add_argument("--output", default="out/convergence")
    args = ap.parse_args()
    cfg = dataclasses.replace(load_config(benchmark_config_path()), solver=args.solver)
    results, prev = [], None
    for level in args.levels:
        r = execute(dataclasses.replace(cfg, mesh=dataclasses.replace(cfg.mesh, refine=level)), log=lambda *_: None)
        results.append(r)
        L = r.losses.total
        delta = "" if prev is None else f"  change {100 * (L - prev) / prev:+.3f}%"
        print(f"level {level}: dof {r.dof}, avg iterations {r.avg_iterations:.2f}, {r.wall_time:.0f} s, "
              f"loss {L:.3f} J{delta}", flush=True)
        prev = L
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(out / "summary.csv", results)


if __name__ == "__main__":
    main()
