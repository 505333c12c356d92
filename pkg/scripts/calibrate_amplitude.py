"""Find the gate flux amplitude that gives a target peak |B| in the limbs.

The field at the limb centers (M1-M3) is sampled at the peak of each phase
after a short ramped march, and the amplitude is adjusted by a root finder.

    python scripts/calibrate_amplitude.py --target 1.5
"""

from __future__ import annotations

import argparse
import dataclasses

import numpy as np
from scipy.optimize import brentq

from hystfem.cli import benchmark_config_path
from hystfem.config import load_config
from hystfem.driver import LoadCycle, run_cycle


def peak_limb_field(cfg, amplitude: float) -> float:
    # ramp plus one period at the benchmark step size
    cycle = dataclasses.replace(cfg.cycle, flux_amplitude=amplitude, n_steps=125, t_end=1.25)
    r = run_cycle(cfg.mesh.build(), cfg.material.build(), cycle, cfg.probes, newton=cfg.newton)
    limbs = [r.probe_names.index(n) for n in ("M1", "M2", "M3")]
    late = r.times >= 0.25
    return float(np.linalg.norm(r.probe_B[late][:, limbs], axis=-1).max())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target", type=float, default=1.5, help="peak |B| in tesla")
    ap.add_argument("--bracket", type=float, nargs=2, default=[0.3, 0.7], help="amplitude bracket, Wb/m")
    args = ap.parse_args()
    cfg = load_config(benchmark_config_path())
    LoadCycle(flux_amplitude=args.bracket[1])  # validates the bracket
    seen = {}

    def f(a: float) -> float:
        seen[a] = peak_limb_field(cfg, a)
        print(f"  amplitude {a:.6f} Wb/m -> peak limb |B| {seen[a]:.6f} T", flush=True)
        return seen[a] - args.target

    a = brentq(f, *args.bracket, xtol=1e-6)
    print(f"amplitude {a:.6f} Wb/m gives {seen[a]:.6f} T (limb width {cfg.mesh.tjoint.limb_width} m)")


if __name__ == "__main__":
    main()
