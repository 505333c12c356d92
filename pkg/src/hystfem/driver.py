"""Load-cycle time stepping for the three-phase T-joint.

Each step sets the wall constants from the prescribed gate fluxes, solves the
joint minimization warm-started from the previous step, records probe fields
and the dissipated energy, and hands J over as the next pinning state.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt

from .femcore import Discretization, PotentialField, lift_walls, wall_constants
from .material import MaterialModel, PolarizationState
from .mesh import Mesh
from .solvers import BCDConfig, NewtonConfig, SolveReport, SolverError, bcd_solve, newton_solve, nu0_factorization


class CycleError(RuntimeError):
    """A load step failed; carries the step index."""

    def __init__(self, step: int, message: str) -> None:
        super().__init__(f"step {step}: {message}")
        self.step = step


def ramp_factor(t: float, ramp: float = 0.25) -> float:
    """Smooth start-up from 0 to 1 over [0, ramp]."""
    if t >= ramp:
        return 1.0
    return 0.5 * (1.0 - math.cos(math.pi * t / ramp))


def flux_waveform(t: float, gate: int, amplitude: float = 1.0, ramp: float = 0.25, frequency: float = 1.0) -> float:
    """Balanced three-phase gate flux (Wb per meter depth) with a ramped start."""
    if t < 0:
        raise ValueError("time must be non-negative")
    return amplitude * math.cos(2.0 * math.pi * frequency * t + 2.0 * math.pi * gate / 3.0) * ramp_factor(t, ramp)


@dataclasses.dataclass(frozen=True)
class LoadCycle:
    n_steps: int = 200
    t_end: float = 2.0
    flux_amplitude: float = 0.6  # Wb per meter depth
    ramp: float = 0.25
    frequency: float = 1.0
    # optional per-gate phases (rad) and weights replacing the balanced default
    phases: tuple[float, ...] | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not self.t_end > 0 or not self.ramp > 0:
            raise ValueError("t_end and ramp must be positive")
        if not (math.isfinite(self.flux_amplitude) and self.flux_amplitude >= 0):
            raise ValueError("flux_amplitude must be a finite non-negative number")
        ph, wt = self._phasors()
        if abs(complex(np.sum(wt * np.exp(1j * ph)))) > 1e-12 * float(np.max(np.abs(wt))):
            raise ValueError("flux balance violated: the gate waveforms must sum to zero at all times")

    def _phasors(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.phases) if self.phases is not None else (len(self.weights) if self.weights is not None else 3)
        ph = np.array(self.phases if self.phases is not None else [2.0 * math.pi * g / 3.0 for g in range(n)])
        wt = np.array(self.weights if self.weights is not None else [1.0] * n, dtype=float)
        if len(ph) != len(wt):
            raise ValueError("phases and weights must have the same length")
        return ph, wt

    @property
    def tau(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        return self.tau * np.arange(1, self.n_steps + 1)

    def fluxes(self, t: float) -> np.ndarray:
        ph, wt = self._phasors()
        phi = self.flux_amplitude * wt * np.cos(2.0 * math.pi * self.frequency * t + ph) * ramp_factor(t, self.ramp)
        # the phasors cancel exactly, the cosines only to rounding; near a zero
        # crossing that residue is large relative to the fluxes themselves
        return phi - phi.mean()


@dataclasses.dataclass(frozen=True)
class ProbeSet:
    names: tuple[str, ...]
    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.points):
            raise ValueError("one point per probe name is required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("probe names must be unique")

    @classmethod
    def tjoint_default(cls, limb_width: float = 0.4, window_width: float = 0.6, window_height: float = 0.8,
                       yoke_height: float = 0.4) -> "ProbeSet":
        """M1-M3 at the limb centers, M4-M6 along the yoke mid-line (left, joint, right)."""
        w, ww = limb_width, window_width
        xc = [0.5 * w, 1.5 * w + ww, 2.5 * w + 2 * ww]
        yl = 0.5 * window_height
        yy = window_height + 0.5 * yoke_height
        pts = [(x, yl) for x in xc] + [(w + 0.5 * ww, yy), (xc[1], yy), (2 * w + 1.5 * ww, yy)]
        return cls(tuple(f"M{i + 1}" for i in range(6)), tuple(pts))

    def elements(self, mesh: Mesh) -> np.ndarray:
        return mesh.locate(np.array(self.points, dtype=float).reshape(-1, 2))


def probe(disc: Discretization, a: PotentialField, state: PolarizationState, m: MaterialModel,
          point: npt.ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    """(B, H) in the triangle containing ``point``."""
    t = int(disc.mesh.locate(point)[0])
    B = disc.curl(a)[t]
    H = m.nu0 * (B - state.J[t].sum(axis=0))
    return B, H


@dataclasses.dataclass
class LossRecord:
    step_energy: np.ndarray  # J per step at the given depth
    times: np.ndarray

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.step_energy)

    @property
    def total(self) -> float:
        return float(np.sum(self.step_energy))

    def total_between(self, t0: float, t1: float) -> float:
        """Energy of the steps with t0 < t_n <= t1."""
        sel = (self.times > t0 + 1e-12) & (self.times <= t1 + 1e-12)
        return float(np.sum(self.step_energy[sel]))


def step_loss(J: np.ndarray, J_prev: np.ndarray, m: MaterialModel, area: np.ndarray, depth: float = 1.0) -> float:
    """depth * sum_e area_e sum_k chi_k |J_k - J_prev,k| (the power density times tau)."""
    d = np.linalg.norm(J - J_prev, axis=-1) @ m.chi
    return float(depth * (area @ d))


def iron_losses(states: Sequence[np.ndarray], m: MaterialModel, area: np.ndarray, times: npt.ArrayLike,
                depth: float = 1.0, J0: np.ndarray | None = None) -> LossRecord:
    """Losses of a sequence of polarization snapshots, starting from J0 (default demagnetized)."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    prev = np.zeros_like(states[0]) if J0 is None else J0
    out = []
    for J in states:
        out.append(step_loss(J, prev, m, area, depth))
        prev = J
    return LossRecord(np.array(out), np.asarray(times, dtype=float))


@dataclasses.dataclass
class CycleResult:
    solver: str
    times: np.ndarray
    probe_names: tuple[str, ...]
    probe_B: np.ndarray  # (n_steps, P, 2)
    probe_H: np.ndarray  # (n_steps, P, 2)
    losses: LossRecord
    reports: list[SolveReport]
    prescribed_fluxes: np.ndarray  # (n_steps, gates)
    computed_fluxes: np.ndarray  # (n_steps, gates)
    wall_time: float
    dof: int
    final_field: PotentialField | None = None
    final_state: PolarizationState | None = None

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iterations for r in self.reports])

    @property
    def avg_iterations(self) -> float:
        return float(np.mean(self.iterations))


def run_cycle(
    mesh: Mesh,
    m: MaterialModel,
    cycle: LoadCycle,
    probes: ProbeSet | None = None,
    solver: str = "newton",
    newton: NewtonConfig = NewtonConfig(),
    bcd: BCDConfig = BCDConfig(),
    depth: float = 1.0,
    on_step: Callable[[int, SolveReport], None] | None = None,
    disc: Discretization | None = None,
) -> CycleResult:
    if solver not in ("newton", "bcd"):
        raise ValueError(f"unknown solver {solver!r}")
    t_start = time.perf_counter()
    disc = Discretization(mesh) if disc is None else disc
    probes = ProbeSet((), ()) if probes is None else probes
    probe_tris = probes.elements(mesh) if probes.names else np.zeros(0, dtype=np.int64)
    fac = nu0_factorization(disc, m)
    a = disc.zero_field()
    state = PolarizationState.demagnetized(disc.n_elements, m.K)
    times = cycle.times()
    P = len(probes.names)
    pB = np.zeros((len(times), P, 2))
    pH = np.zeros((len(times), P, 2))
    phi_in = np.zeros((len(times), len(disc.gate_labels)))
    phi_out = np.zeros_like(phi_in)
    energies = np.zeros(len(times))
    reports: list[SolveReport] = []
    H = None
    for n, t in enumerate(times):
        phi = cycle.fluxes(float(t))
        phi_in[n] = phi
        try:
            walls = wall_constants(phi, mesh)
            a = lift_walls(disc, a, walls, fac, m.nu0)
            if solver == "newton":
                a, new, rep = newton_solve(disc, a, state, m, newton)
            else:
                a, new, rep = bcd_solve(disc, a, state, m, bcd, factorization=fac, H0=H)
                H = rep.H
        except (SolverError, ValueError) as exc:
            raise CycleError(n + 1, str(exc)) from exc
        B = disc.curl(a)
        phi_out[n] = disc.gate_fluxes(B)
        energies[n] = step_loss(new.J, new.J_prev, m, disc.area, depth)
        if P:
            pB[n] = B[probe_tris]
            pH[n] = m.nu0 * (B[probe_tris] - new.J[probe_tris].sum(axis=1))
        reports.append(rep)
        if on_step is not None:
            on_step(n + 1, rep)
        state = new.advanced()
    return CycleResult(
        solver=solver,
        times=times,
        probe_names=probes.names,
        probe_B=pB,
        probe_H=pH,
        losses=LossRecord(energies, times),
        reports=reports,
        prescribed_fluxes=phi_in,
        computed_fluxes=phi_out,
        wall_time=time.perf_counter() - t_start,
        dof=disc.n_free,
        final_field=a,
        final_state=state,
    )


# ---------------------------------------------------------------- locus analysis


def loop_area(x: np.ndarray, y: np.ndarray) -> float:
    """Signed area enclosed by a closed polygonal curve (shoelace)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def loop_diameter(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=float)
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", d, d))))


def hysteresis_work(H: np.ndarray, B: np.ndarray) -> float:
    """Closed-path integral of H . dB (trapezoidal), J/m^3 per cycle; positive for lossy loops."""
    H = np.asarray(H, dtype=float)
    B = np.asarray(B, dtype=float)
    dB = np.roll(B, -1, axis=0) - B
    Hm = 0.5 * (H + np.roll(H, -1, axis=0))
    return float(np.sum(np.einsum("nd,nd->n", Hm, dB)))


def steady_window(times: np.ndarray, t0: float = 1.0, t1: float = 2.0) -> np.ndarray:
    """Indices of the samples t0 <= t <= t1."""
    return np.flatnonzero((times >= t0 - 1e-12) & (times <= t1 + 1e-12))


# ---------------------------------------------------------------- CSV output


def _g(x: float) -> str:
    return f"{x:.17g}"


def write_losses_csv(path: Path | str, result: CycleResult, timings: bool = True) -> None:
    """Per-step losses; ``timings=False`` writes zero wall times so reruns are bitwise identical."""
    cum = result.losses.cumulative
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "step_energy_J", "cumulative_J", "solver_iterations", "wall_time_s"])
        for n, t in enumerate(result.times):
            rep = result.reports[n]
            w.writerow([n + 1, _g(t), _g(result.losses.step_energy[n]), _g(cum[n]),
                        rep.iterations, _g(rep.wall_time if timings else 0.0)])


def write_probes_csv(path: Path | str, result: CycleResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "point_name", "Bx", "By", "Hx", "Hy"])
        for n, t in enumerate(result.times):
            for p, name in enumerate(result.probe_names):
                B = result.probe_B[n, p]
                H = result.probe_H[n, p]
                w.writerow([_g(t), name, _g(B[0]), _g(B[1]), _g(H[0]), _g(H[1])])


SUMMARY_COLUMNS = ["solver", "dof", "avg_iterations", "total_time_s", "total_loss_J", "steady_cycle_loss_J"]


def summary_row(result: CycleResult, timings: bool = True) -> dict[str, object]:
    return {
        "solver": result.solver,
        "dof": result.dof,
        "avg_iterations": _g(result.avg_iterations),
        "total_time_s": _g(result.wall_time if timings else 0.0),
        "total_loss_J": _g(result.losses.total),
        "steady_cycle_loss_J": _g(result.losses.total_between(1.0, 2.0)),
    }


def write_summary_csv(path: Path | str, results: Sequence[CycleResult], timings: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for r in results:
            w.writerow(summary_row(r, timings))
