"""P1 potential / P0 polarization discretization of the 2D field problem.

The unknown is the z-component A of the vector potential, continuous and
piecewise linear, with B = (dA/dy, -dA/dx) constant on every triangle. Walls
carry one Dirichlet constant each; gates are natural boundaries. The flux
through a gate equals the jump of A between its end points, so prescribed gate
fluxes become wall constants.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from . import _kernels
from .material import DomainError, MaterialModel, PolarizationState
from .mesh import Mesh, MeshError


class FluxError(ValueError):
    """Gate fluxes that cannot be realized by wall constants."""


class AssemblyError(ValueError):
    """Invalid element data passed to an assembly routine."""


@dataclasses.dataclass
class PotentialField:
    free: npt.NDArray[np.float64]  # values on non-wall nodes, Wb/m
    walls: npt.NDArray[np.float64]  # one constant per wall label, Wb/m

    def copy(self) -> "PotentialField":
        return PotentialField(self.free.copy(), self.walls.copy())


def wall_constants(fluxes: npt.ArrayLike, mesh: Mesh) -> npt.NDArray[np.float64]:
    """Wall constants (in wall label order) realizing the gate fluxes (gate label order).

    Walking the boundary counterclockwise, the constant jumps by the gate flux
    across every gate. The first wall is the gauge, c = 0.
    """
    phi = np.asarray(fluxes, dtype=float).reshape(-1)
    gates = mesh.gate_labels
    walls = mesh.wall_labels
    if len(phi) != len(gates):
        raise FluxError(f"expected {len(gates)} gate fluxes, got {len(phi)}")
    scale = float(np.max(np.abs(phi))) if phi.size else 0.0
    if abs(float(np.sum(phi))) > 1e-12 * scale:
        raise FluxError(f"gate fluxes must sum to zero, got {np.sum(phi):.3e}")
    runs = [lb for lb, _ in mesh.boundary_loop()]
    kinds = [lb[0] for lb in runs]
    alternating = all(kinds[i] != kinds[(i + 1) % len(kinds)] for i in range(len(kinds)))
    if not alternating or kinds[0] != "w" or len(set(runs)) != len(runs) or len(runs) != len(gates) + len(walls):
        raise MeshError(f"walls and gates must alternate once around the boundary, got {runs}")
    flux_of = dict(zip(gates, phi))
    const = {runs[0]: 0.0}
    c = 0.0
    for i in range(1, len(runs), 2):
        c += flux_of[runs[i]]
        if i + 1 < len(runs):
            const[runs[i + 1]] = c
    return np.array([const[w] for w in walls])


class Discretization:
    """Mesh-derived data shared by assembly, objective and residual evaluation."""

    def __init__(self, mesh: Mesh) -> None:
        self.mesh = mesh
        self.tri = np.asarray(mesh.triangles)
        self.area = mesh.areas()
        grads = mesh.basis_gradients()
        # Curl of a hat function: (d/dy, -d/dx)
        self.curls = np.stack([grads[..., 1], -grads[..., 0]], axis=-1)
        self.wall_labels = mesh.wall_labels
        self.gate_labels = mesh.gate_labels
        self.wall_of_node = np.full(mesh.n_nodes, -1, dtype=np.int64)
        for w, lb in enumerate(self.wall_labels):
            self.wall_of_node[mesh.wall_nodes()[lb]] = w
        self.free_nodes = np.flatnonzero(self.wall_of_node < 0)
        self.free_index = np.full(mesh.n_nodes, -1, dtype=np.int64)
        self.free_index[self.free_nodes] = np.arange(len(self.free_nodes))
        self._build_pattern()
        self._build_gates()
        # static parts of the residual scaling: area_e |Curl phi_i| per local node
        loc = self.free_index[self.tri].reshape(-1)
        self._loc_keep = loc >= 0
        self._loc_free = loc[self._loc_keep]
        self._area_curl = (self.area[:, None] * np.linalg.norm(self.curls, axis=-1)).reshape(-1)[self._loc_keep]

    @property
    def n_free(self) -> int:
        return len(self.free_nodes)

    @property
    def n_elements(self) -> int:
        return len(self.tri)

    def _build_pattern(self) -> None:
        loc = self.free_index[self.tri]  # (T, 3)
        rows = np.repeat(loc, 3, axis=1).reshape(-1)
        cols = np.tile(loc, (1, 3)).reshape(-1)
        keep = (rows >= 0) & (cols >= 0)
        self._entry_mask = keep
        n = self.n_free
        key = rows[keep] * n + cols[keep]
        uniq, inv = np.unique(key, return_inverse=True)
        self._entry_slot = inv
        r, c = np.divmod(uniq, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        self._indptr = np.cumsum(indptr)
        self._indices = c.astype(np.int64)
        self._nnz = len(uniq)

    def _build_gates(self) -> None:
        owner: dict[tuple[int, int], int] = {}
        for t, (a, b, c) in enumerate(self.tri):
            for i, j in ((a, b), (b, c), (c, a)):
                owner[(int(i), int(j))] = t
        edges, tris, gate = [], [], []
        for lb_index, lb in enumerate(self.gate_labels):
            for (i, j), elb in zip(self.mesh.boundary_edges, self.mesh.boundary_labels):
                if elb != lb:
                    continue
                i, j = int(i), int(j)
                if (i, j) not in owner:
                    i, j = j, i  # orient counterclockwise with the owning triangle
                edges.append((i, j))
                tris.append(owner[(i, j)])
                gate.append(lb_index)
        self._gate_edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self._gate_tris = np.array(tris, dtype=np.int64)
        self._gate_ids = np.array(gate, dtype=np.int64)

    # ------------------------------------------------------------ fields

    def nodal(self, a: PotentialField) -> npt.NDArray[np.float64]:
        out = np.empty(self.mesh.n_nodes)
        out[self.free_nodes] = a.free
        wn = self.wall_of_node >= 0
        out[wn] = np.asarray(a.walls)[self.wall_of_node[wn]]
        return out

    def curl_nodal(self, values: npt.ArrayLike) -> npt.NDArray[np.float64]:
        v = np.asarray(values, dtype=float)[self.tri]
        return np.einsum("ti,tid->td", v, self.curls)

    def curl(self, a: PotentialField) -> npt.NDArray[np.float64]:
        return self.curl_nodal(self.nodal(a))

    def curl_free(self, free: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Curl of a field that vanishes on the walls (an increment)."""
        full = np.zeros(self.mesh.n_nodes)
        full[self.free_nodes] = free
        return self.curl_nodal(full)

    def zero_field(self, walls: npt.ArrayLike | None = None) -> PotentialField:
        w = np.zeros(len(self.wall_labels)) if walls is None else np.asarray(walls, dtype=float).copy()
        return PotentialField(np.zeros(self.n_free), w)

    def load(self, v: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Vector of sum_e area_e Curl(phi_i) . v_e over free nodes i."""
        v = np.asarray(v, dtype=float)
        local = self.area[:, None] * np.einsum("tid,td->ti", self.curls, v)
        return np.bincount(self._loc_free, weights=local.reshape(-1)[self._loc_keep], minlength=self.n_free)

    def gate_fluxes(self, B: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Outward flux of B through every gate, Wb per meter of depth."""
        B = np.asarray(B, dtype=float)
        p = self.mesh.nodes
        t = p[self._gate_edges[:, 1]] - p[self._gate_edges[:, 0]]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)  # outward normal times edge length
        per_edge = np.einsum("ed,ed->e", B[self._gate_tris], n)
        return np.bincount(self._gate_ids, weights=per_edge, minlength=len(self.gate_labels))


# ---------------------------------------------------------------- assembly


def check_element_tensors(nu: np.ndarray) -> None:
    nu = np.asarray(nu)
    asym = np.abs(nu[:, 0, 1] - nu[:, 1, 0]) > 1e-12 * (np.abs(nu[:, 0, 0]) + np.abs(nu[:, 1, 1]))
    det = nu[:, 0, 0] * nu[:, 1, 1] - nu[:, 0, 1] * nu[:, 1, 0]
    bad = np.flatnonzero(asym | ~(nu[:, 0, 0] > 0) | ~(det > 0))
    if bad.size:
        raise AssemblyError(f"element tensor of triangle {bad[0]} is not symmetric positive definite")


def assemble_tangent(disc: Discretization, nu: npt.ArrayLike, check: bool = True) -> sp.csr_matrix:
    """Matrix of sum_e area_e Curl(phi_i) . nu_e Curl(phi_j) on free nodes.

    ``nu`` is (T, 2, 2) or a scalar applied as nu * I.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.ndim == 0:
        vals = float(nu) * np.einsum("tid,tjd->tij", disc.curls, disc.curls)
    else:
        if nu.shape != (disc.n_elements, 2, 2):
            raise AssemblyError(f"expected element tensors of shape {(disc.n_elements, 2, 2)}, got {nu.shape}")
        if check:
            check_element_tensors(nu)
        vals = np.einsum("tid,tde,tje->tij", disc.curls, nu, disc.curls)
    vals = (disc.area[:, None, None] * vals).reshape(-1)[disc._entry_mask]
    data = np.bincount(disc._entry_slot, weights=vals, minlength=disc._nnz)
    return sp.csr_matrix((data, disc._indices, disc._indptr), shape=(disc.n_free, disc.n_free))


def element_stiffness(curls: np.ndarray, area: float, nu: np.ndarray | None = None) -> np.ndarray:
    """3x3 element matrix area * Curl_i . nu Curl_j for one triangle."""
    nu = np.eye(2) if nu is None else np.asarray(nu)
    return area * curls @ nu @ curls.T


# ---------------------------------------------------------------- objective


@dataclasses.dataclass
class ElementTerms:
    """Pointwise quantities of the discrete objective at a state."""

    B: np.ndarray  # (T, 2)
    H: np.ndarray  # (T, 2) nu0 (B - sum_k J_k)
    cell_energy: np.ndarray  # (T,) sum_k U_k + chi_k |J_k - Jp_k|_eps
    cell_grad: np.ndarray  # (T, K, 2) grad U_k + chi_k v_k
    cell_hess: np.ndarray  # (T, K, 3)

    @property
    def residual_J(self) -> np.ndarray:
        """Per-area polarization residual grad U_k + chi_k v_k - H, (T, K, 2)."""
        return self.cell_grad - self.H[:, None, :]


def element_terms(B: np.ndarray, state: PolarizationState, m: MaterialModel) -> ElementTerms:
    As, Js, c, chi, eps = m.arrays()
    T, K = state.J.shape[:2]
    grad = np.empty((T, K, 2))
    hess = np.empty((T, K, 3))
    J = np.ascontiguousarray(state.J)
    energy = _kernels.cell_terms(J, np.ascontiguousarray(state.J_prev), As, Js, c, chi, eps, grad, hess)
    H = m.nu0 * (B - J.sum(axis=1))
    return ElementTerms(B, H, energy, grad, hess)


def objective_from(disc: Discretization, B: np.ndarray, J: np.ndarray, J_prev: np.ndarray, m: MaterialModel) -> float:
    """Objective for element fields; inf if a polarization leaves the domain."""
    As, Js, c, chi, eps = m.arrays()
    cells = _kernels.cell_energy(np.ascontiguousarray(J), np.ascontiguousarray(J_prev), As, Js, c, chi, eps)
    d = B - J.sum(axis=1)
    dens = 0.5 * m.nu0 * np.einsum("td,td->t", d, d) + cells
    return float(disc.area @ dens)


def objective_value(disc: Discretization, a: PotentialField, state: PolarizationState, m: MaterialModel) -> float:
    """Energy per unit depth (J/m) of the discrete minimization problem."""
    state.check_domain(m)
    return objective_from(disc, disc.curl(a), state.J, state.J_prev, m)


@dataclasses.dataclass
class Gradient:
    A: np.ndarray  # (n_free,) derivative w.r.t. free nodal values
    J: np.ndarray  # (T, K, 2) derivative w.r.t. polarizations


def gradient(disc: Discretization, a: PotentialField, state: PolarizationState, m: MaterialModel,
             terms: ElementTerms | None = None) -> Gradient:
    if terms is None:
        terms = element_terms(disc.curl(a), state, m)
    gA = disc.load(terms.H)
    gJ = disc.area[:, None, None] * terms.residual_J
    return Gradient(gA, gJ)


def residual_norms(disc: Discretization, terms: ElementTerms, m: MaterialModel) -> tuple[float, float]:
    """Scaled first-order residuals (field equation, polarization equations).

    The field residual is the largest nodal imbalance relative to the largest
    gross nodal force sum_e area_e |Curl phi_i| |H_e|. The polarization
    residual is max |grad U_k + chi_k v_k - H| relative to max(|H|, chi).
    """
    rA = np.abs(disc.load(terms.H))
    Hn = np.sqrt(np.einsum("td,td->t", terms.H, terms.H))
    gross = disc._area_curl * np.repeat(Hn, 3)[disc._loc_keep]
    scale_A = np.bincount(disc._loc_free, weights=gross, minlength=disc.n_free)
    res_A = float(np.max(rA) / np.max(scale_A)) if disc.n_free and np.max(scale_A) > 0 else 0.0
    R = terms.residual_J
    rJ = np.sqrt(np.einsum("tkd,tkd->tk", R, R))
    scale_J = max(float(np.max(Hn, initial=0.0)), float(np.max(m.chi)), 1.0)
    return res_A, float(np.max(rJ, initial=0.0) / scale_J)


def kkt_violation(terms: ElementTerms, state: PolarizationState, m: MaterialModel) -> float:
    """max over elements and cells of |H - grad U_k(J_k)| - chi_k (A/m); <= 0 when admissible."""
    As, Js, c, chi, eps = m.arrays()
    T, K = state.J.shape[:2]
    grad = np.empty((T, K, 2))
    hess = np.empty((T, K, 3))
    # gradient of U alone: evaluate with chi = 0
    _kernels.cell_terms(np.ascontiguousarray(state.J), np.ascontiguousarray(state.J_prev), As, Js, c,
                        np.zeros_like(chi), eps, grad, hess)
    gap = np.linalg.norm(terms.H[:, None, :] - grad, axis=-1) - chi[None, :]
    return float(np.max(gap))



def lift_walls(disc: Discretization, a: PotentialField, walls: npt.ArrayLike, solver, nu: float) -> PotentialField:
    """Move to new wall constants, extending the change harmonically into the free nodes.

    ``solver`` solves with the stiffness ``assemble_tangent(disc, nu)`` (anything
    with a ``solve(rhs)`` method, e.g. a reusable factorization).
    """
    walls = np.asarray(walls, dtype=float)
    jump = PotentialField(np.zeros(disc.n_free), walls - a.walls)
    d = solver.solve(-disc.load(nu * disc.curl(jump)))
    return PotentialField(a.free + d, walls.copy())
