"""Independent reference computations for verification.

Nothing here calls the derivative or minimization code of ``material``,
``femcore`` or ``solvers``. Energies are re-derived from their closed forms,
derivatives come from finite differences or the complex step, and minimizers
from exhaustive search or a general-purpose optimizer.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt
from scipy import optimize

from .material import CellParams, MaterialModel
from .mesh import Mesh


# ---------------------------------------------------------------- derivatives


def fd_gradient(f: Callable[[np.ndarray], float], x: npt.ArrayLike, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, O(h^2)."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        fp, fm = f((x.ravel() + e).reshape(x.shape)), f((x.ravel() - e).reshape(x.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"function not finite at stencil point {i} (h={h})")
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape)


def fd_jacobian(g: Callable[[np.ndarray], np.ndarray], x: npt.ArrayLike, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function; rows index outputs."""
    x = np.asarray(x, dtype=float).ravel()
    cols = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        cols.append((np.asarray(g(x + e), dtype=float).ravel() - np.asarray(g(x - e), dtype=float).ravel()) / (2 * h))
    return np.stack(cols, axis=1)


def complex_step_gradient(f: Callable[[np.ndarray], complex], x: npt.ArrayLike, h: float = 1e-30) -> np.ndarray:
    """Exact-to-rounding gradient of a real-analytic function written with complex-safe operations."""
    x = np.asarray(x, dtype=float).ravel()
    g = np.empty(x.size)
    for i in range(x.size):
        z = x.astype(complex)
        z[i] += 1j * h
        g[i] = np.imag(f(z)) / h
    return g


# ---------------------------------------------------------------- cell energy, from the closed form


def cell_energy_ref(J: npt.ArrayLike, p: CellParams):
    """-(c A_s J_s / pi) log cos(pi |J| / (2 J_s)); complex-safe, inf outside the disk for real input."""
    J = np.asarray(J)
    r = np.sqrt(J[..., 0] ** 2 + J[..., 1] ** 2)
    if not np.iscomplexobj(r) and np.any(r >= p.J_s):
        return np.inf
    return -(p.form_coeff * p.A_s * p.J_s / math.pi) * np.log(np.cos(math.pi * r / (2 * p.J_s)))


def cell_update_objective(J: npt.ArrayLike, H: npt.ArrayLike, J_p: npt.ArrayLike, p: CellParams):
    J = np.asarray(J)
    d = J - np.asarray(J_p)
    pin = p.chi * np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + p.eps)
    return cell_energy_ref(J, p) - (J[..., 0] * H[0] + J[..., 1] * H[1]) + pin


def anhysteretic_root(h: float, p: CellParams) -> float:
    """Radius r with U'(r) = h by bracketing, U' from the complex step of the energy."""
    if h == 0:
        return 0.0

    def du(r: float) -> float:
        return float(np.imag(cell_energy_ref(np.array([r + 1e-30j, 0.0]), p)) / 1e-30)

    sgn = 1.0 if h > 0 else -1.0
    r = optimize.brentq(lambda r: du(r) - abs(h), 0.0, p.J_s * (1 - 1e-15), xtol=1e-300, rtol=1e-15, maxiter=500)
    return sgn * r


def newton_polish(f: Callable[[np.ndarray], complex], x0: npt.ArrayLike, max_iter: int = 50) -> np.ndarray:
    """Damped Newton on a complex-safe function: complex-step gradient, difference Hessian."""
    x = np.asarray(x0, dtype=float).copy()

    def fr(z: np.ndarray) -> float:
        v = float(np.real(f(z)))
        return v if np.isfinite(v) else math.inf

    def grad(z: np.ndarray) -> np.ndarray:
        return complex_step_gradient(f, z)

    scale = max(1.0, float(np.max(np.abs(x))))
    for _ in range(max_iter):
        g = grad(x)
        Hs = fd_jacobian(grad, x, h=1e-7 * scale)
        Hs = 0.5 * (Hs + Hs.T)
        try:
            step = -np.linalg.solve(Hs, g)
        except np.linalg.LinAlgError:
            break
        slope = float(g @ step)
        if not slope < 0:
            break
        f0, t = fr(x), 1.0
        while t > 1e-12 and not fr(x + t * step) <= f0 + 1e-4 * t * slope:
            t *= 0.5
        if t <= 1e-12:
            break
        x = x + t * step
        if np.max(np.abs(t * step)) <= 1e-15 * scale:
            break
    return x


# ---------------------------------------------------------------- exhaustive search


def zoom_minimize(
    f: Callable[[np.ndarray], np.ndarray],
    lo: npt.ArrayLike,
    hi: npt.ArrayLike,
    n_grid: int = 21,
    shrink: float = 0.25,
    tol: float = 1e-13,
    max_rounds: int = 200,
) -> np.ndarray:
    """Grid search with repeated zoom around the best point.

    ``f`` maps an (M, n) array of points to M values (inf marks infeasible
    points). For a convex ``f`` the box keeps the minimizer while the grid
    spacing stays larger than the distance to it, which ``shrink`` guards by
    keeping two spacings of margin.
    """
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    n = lo.size
    best = 0.5 * (lo + hi)
    for _ in range(max_rounds):
        axes = [np.linspace(lo[i], hi[i], n_grid) for i in range(n)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        pts = np.vstack([best, pts])  # the incumbent stays a candidate
        vals = np.asarray(f(pts), dtype=float)
        k = int(np.argmin(np.where(np.isfinite(vals), vals, np.inf)))
        if not np.isfinite(vals[k]):
            raise ValueError("no feasible grid point")
        best = pts[k]
        spacing = (hi - lo) / (n_grid - 1)
        if np.max(spacing) <= tol:
            break
        half = np.maximum(shrink * (hi - lo) / 2, 2 * spacing)
        lo, hi = best - half, best + half
    return best


def brute_force_cell_min(H: npt.ArrayLike, J_p: npt.ArrayLike, p: CellParams, n_grid: int = 41) -> np.ndarray:
    """Minimizer of U(J) - <H, J> + chi |J - J_p|_eps over the disk by zoomed grid search."""
    H = np.asarray(H, dtype=float)
    J_p = np.asarray(J_p, dtype=float)

    def f(pts: np.ndarray) -> np.ndarray:
        r = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2)  # same rounding as the energy
        out = np.full(len(pts), np.inf)
        ok = r < p.J_s
        if np.any(ok):
            out[ok] = cell_update_objective(pts[ok], H, J_p, p)
        return out

    R = p.J_s
    return zoom_minimize(f, [-R, -R], [R, R], n_grid=n_grid, tol=1e-14 * R)


def element_objective_ref(J: np.ndarray, B: np.ndarray, J_p: np.ndarray, m: MaterialModel):
    """nu0/2 |B - sum J|^2 + sum_k [U_k + chi_k |J_k - J_p,k|_eps] for one element; J is (..., K, 2)."""
    S = J.sum(axis=-2)
    d = B - S
    val = 0.5 * m.nu0 * (d[..., 0] ** 2 + d[..., 1] ** 2)
    for k, p in enumerate(m.cells):
        Jk = J[..., k, :]
        if not np.iscomplexobj(Jk):
            bad = np.sqrt(Jk[..., 0] ** 2 + Jk[..., 1] ** 2) >= p.J_s
            if np.any(bad):
                val = np.where(bad, np.inf, val)
                Jk = np.where(bad[..., None], 0.0, Jk)
        dk = Jk - J_p[k]
        val = val + cell_energy_ref(Jk, p) + p.chi * np.sqrt(dk[..., 0] ** 2 + dk[..., 1] ** 2 + p.eps)
    return val


def brute_force_element_min(B: npt.ArrayLike, J_p: npt.ArrayLike, m: MaterialModel, n_grid: int = 9,
                            polish: bool = True) -> np.ndarray:
    """Joint minimizer over (J_1..J_K) of one element: zoomed grid search in 2K dimensions,
    finished by Newton steps on the complex-step gradient.

    The search runs in the coordinates (S, J_1, ..., J_{K-1}) with S the total
    polarization. The stiff nu0 term then acts along the S axes only, so the
    axis-aligned grids do not have to resolve a tilted narrow valley.
    """
    B = np.asarray(B, dtype=float)
    J_p = np.asarray(J_p, dtype=float)
    K = m.K
    S_max = float(np.sum(m.J_s))
    R = np.concatenate([[S_max, S_max], np.repeat(m.J_s[:-1], 2)])

    def to_J(pts: np.ndarray) -> np.ndarray:
        pts = pts.reshape(-1, K, 2)
        J = pts.copy()
        J[:, K - 1] = pts[:, 0] - pts[:, 1:].sum(axis=1)
        J[:, 0] = pts[:, 1] if K > 1 else pts[:, 0]
        if K > 1:
            J[:, 1:K - 1] = pts[:, 2:K]
        return J

    def f(pts: np.ndarray) -> np.ndarray:
        return element_objective_ref(to_J(pts), B, J_p, m)

    x = zoom_minimize(f, -R, R, n_grid=n_grid, shrink=0.3, tol=1e-13 * S_max, max_rounds=400)
    if polish:
        # grids lose resolution in the thin lens |J_k| < J_s near saturation
        x = newton_polish(lambda z: f(z[None, :])[0], x)
    return to_J(x)[0]


# ---------------------------------------------------------------- scalar play operator


def _du_scalar(J: float, p: CellParams) -> float:
    return 0.5 * p.form_coeff * p.A_s * math.tan(0.5 * math.pi * J / p.J_s)


def _du_inverse(h: float, p: CellParams) -> float:
    return (2 * p.J_s / math.pi) * math.atan(2 * h / (p.form_coeff * p.A_s))


def scalar_play_reference(H: Sequence[float], p: CellParams, J0: float = 0.0) -> np.ndarray:
    """Exact colinear response of one cell with eps = 0.

    J stays put while |H - U'(J)| <= chi, otherwise it moves to the nearer
    boundary of the stop band: U'(J) = H - chi or U'(J) = H + chi.
    """
    if p.eps != 0:
        raise ValueError("the analytic play operator needs eps = 0")
    J = float(J0)
    out = np.empty(len(H))
    for n, h in enumerate(H):
        drive = h - _du_scalar(J, p)
        if drive > p.chi:
            J = _du_inverse(h - p.chi, p)
        elif drive < -p.chi:
            J = _du_inverse(h + p.chi, p)
        out[n] = J
    return out


def scalar_play_multi(H: Sequence[float], m: MaterialModel, J0: npt.ArrayLike | None = None) -> np.ndarray:
    """Cell-wise play responses under a common field; shape (len(H), K)."""
    J0 = np.zeros(m.K) if J0 is None else np.asarray(J0, dtype=float)
    return np.stack([scalar_play_reference(H, p.with_(eps=0.0), J0[k]) for k, p in enumerate(m.cells)], axis=1)


# ---------------------------------------------------------------- tiny meshes


def two_triangle_mesh(size: float = 0.01) -> Mesh:
    """Unit square split along a diagonal: left edge a wall, the rest one gate.

    Two nodes are free. With a single wall the gate flux is zero, so a
    nontrivial field needs remanent polarizations.
    """
    s = size
    nodes = np.array([[0, 0], [s, 0], [s, s], [0, s]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    edges = np.array([[3, 0], [0, 1], [1, 2], [2, 3]])
    return Mesh(nodes, tris, np.ones(2, dtype=np.int64), edges, ("w1", "g1", "g1", "g1"))


def gated_square_mesh(size: float = 0.01) -> Mesh:
    """Square of eight triangles with walls left/right and gates bottom/top; three free nodes."""
    s = size / 2
    nodes = np.array([[i * s, j * s] for j in range(3) for i in range(3)], dtype=float)
    tris = []
    for j in range(2):
        for i in range(2):
            a, b, c, d = 3 * j + i, 3 * j + i + 1, 3 * (j + 1) + i + 1, 3 * (j + 1) + i
            tris += [[a, b, c], [a, c, d]]
    edges = [[0, 1], [1, 2], [2, 5], [5, 8], [8, 7], [7, 6], [6, 3], [3, 0]]
    labels = ("g1", "g1", "w2", "w2", "g2", "g2", "w1", "w1")
    return Mesh(nodes, np.array(tris), np.ones(8, dtype=np.int64), np.array(edges), labels)


@dataclasses.dataclass
class TinyProblem:
    """Discrete objective of a small mesh, re-implemented from the element formulas.

    Unknowns are the nodal A of the free nodes followed by all (element, cell)
    polarizations. ``fixed`` maps constrained node indices to their values.
    """

    mesh: Mesh
    m: MaterialModel
    J_prev: np.ndarray  # (T, K, 2)
    fixed: dict[int, float]

    def __post_init__(self) -> None:
        self.free = np.array([i for i in range(self.mesh.n_nodes) if i not in self.fixed], dtype=np.int64)
        T = self.mesh.n_triangles
        self.grads = np.zeros((T, 3, 2))
        self.areas = np.zeros(T)
        for t, tri in enumerate(self.mesh.triangles):
            p = self.mesh.nodes[tri]
            M = np.array([[1, p[0, 0], p[0, 1]], [1, p[1, 0], p[1, 1]], [1, p[2, 0], p[2, 1]]])
            coef = np.linalg.inv(M)  # columns give the hat function coefficients
            self.grads[t] = coef[1:, :].T
            self.areas[t] = 0.5 * abs(np.linalg.det(M))

    @property
    def n_unknowns(self) -> int:
        return self.free.size + self.J_prev.size

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        A = np.zeros(self.mesh.n_nodes, dtype=x.dtype)
        for i, v in self.fixed.items():
            A[i] = v
        A[self.free] = x[: self.free.size]
        return A, x[self.free.size:].reshape(self.J_prev.shape)

    def objective(self, x: np.ndarray):
        A, J = self.split(x)
        total = 0.0
        for t, tri in enumerate(self.mesh.triangles):
            gradA = self.grads[t].T @ A[tri]
            B = np.array([gradA[1], -gradA[0]])
            total = total + self.areas[t] * element_objective_ref(J[t], B, self.J_prev[t], self.m)
        return total

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return complex_step_gradient(self.objective, x)

    def minimize(self, x0: npt.ArrayLike | None = None, polish_iter: int = 50) -> np.ndarray:
        """BFGS from J = J_prev, A = 0, then ``newton_polish``."""
        x = np.zeros(self.n_unknowns) if x0 is None else np.asarray(x0, dtype=float).copy()
        if x0 is None:
            x[self.free.size:] = self.J_prev.ravel()

        def fr(z: np.ndarray) -> float:
            v = float(np.real(self.objective(z)))
            return v if np.isfinite(v) else 1e300

        res = optimize.minimize(fr, x, jac=self.gradient, method="BFGS", options={"gtol": 1e-10, "maxiter": 20000})
        return newton_polish(self.objective, res.x, polish_iter)
