"""Triangle meshes with labeled boundary segments.

Boundary labels are ``w<k>`` (flux walls, Dirichlet constant A_z) and
``g<k>`` (flux gates, prescribed total flux).
"""

from __future__ import annotations

import dataclasses
import math
from collections import Counter

import numpy as np
import numpy.typing as npt


class MeshError(ValueError):
    """Raised for malformed or invalid meshes."""


@dataclasses.dataclass(frozen=True)
class Mesh:
    nodes: npt.NDArray[np.float64]  # (N, 2), meters
    triangles: npt.NDArray[np.int64]  # (T, 3), counterclockwise
    regions: npt.NDArray[np.int64]  # (T,)
    boundary_edges: npt.NDArray[np.int64]  # (E, 2)
    boundary_labels: tuple[str, ...]  # (E,)

    def __post_init__(self) -> None:
        for name in ("nodes", "triangles", "regions", "boundary_edges"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "boundary_labels", tuple(self.boundary_labels))
        _validate(self)
        object.__setattr__(self, "_loop_cache", None)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def wall_labels(self) -> list[str]:
        return sorted({lb for lb in self.boundary_labels if lb.startswith("w")}, key=_label_key)

    @property
    def gate_labels(self) -> list[str]:
        return sorted({lb for lb in self.boundary_labels if lb.startswith("g")}, key=_label_key)

    def areas(self) -> npt.NDArray[np.float64]:
        return signed_areas(self.nodes, self.triangles)

    def basis_gradients(self) -> npt.NDArray[np.float64]:
        """Gradients of the three P1 hat functions on every triangle, shape (T, 3, 2)."""
        p = self.nodes[self.triangles]
        area2 = 2.0 * self.areas()
        # grad(lambda_i) = rot90(opposite edge) / (2 area)
        e0 = p[:, 2] - p[:, 1]
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        edges = np.stack([e0, e1, e2], axis=1)
        grads = np.empty_like(edges)
        grads[..., 0] = -edges[..., 1]
        grads[..., 1] = edges[..., 0]
        return grads / area2[:, None, None]

    def wall_nodes(self) -> dict[str, npt.NDArray[np.int64]]:
        """Nodes on each wall; corner nodes shared with a gate belong to the wall."""
        out: dict[str, set[int]] = {lb: set() for lb in self.wall_labels}
        for (i, j), lb in zip(self.boundary_edges, self.boundary_labels):
            if lb.startswith("w"):
                out[lb].update((int(i), int(j)))
        return {lb: np.array(sorted(s), dtype=np.int64) for lb, s in out.items()}

    def boundary_loop(self) -> list[tuple[str, list[int]]]:
        """Boundary as counterclockwise runs of equal label.

        Each run is ``(label, node_path)``; consecutive runs share their end
        node. The loop is rotated so that it starts at the beginning of a run of
        the first wall label.
        """
        if self._loop_cache is None:
            object.__setattr__(self, "_loop_cache", self._walk_boundary())
        return [(lb, list(nodes)) for lb, nodes in self._loop_cache]

    def _walk_boundary(self) -> list[tuple[str, list[int]]]:
        succ: dict[int, tuple[int, str]] = {}
        oriented = _oriented_boundary(self)
        for (i, j), lb in oriented:
            succ[i] = (j, lb)
        start = int(oriented[0][0][0])
        seq: list[tuple[int, int, str]] = []
        i = start
        for _ in range(len(oriented)):
            j, lb = succ[i]
            seq.append((i, j, lb))
            i = j
        if i != start:
            raise MeshError("boundary edges do not form a single closed loop")
        # rotate to the start of a run of the first wall (or first label)
        labels = [s[2] for s in seq]
        first = self.wall_labels[0] if self.wall_labels else sorted(set(labels), key=_label_key)[0]
        n = len(seq)
        for r in range(n):
            if labels[r] == first and labels[r - 1] != first:
                break
        else:
            r = 0
        seq = seq[r:] + seq[:r]
        runs: list[tuple[str, list[int]]] = []
        for i, j, lb in seq:
            if runs and runs[-1][0] == lb:
                runs[-1][1].append(j)
            else:
                runs.append((lb, [i, j]))
        return runs

    def locate(self, points: npt.ArrayLike, tol: float = 1e-12) -> npt.NDArray[np.int64]:
        """Index of a triangle containing each point; raises if a point is outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.nodes[self.triangles]
        out = np.empty(len(pts), dtype=np.int64)
        for n, x in enumerate(pts):
            lam = _barycentric(p, x)
            ok = np.all(lam >= -tol, axis=1)
            hits = np.flatnonzero(ok)
            if hits.size == 0:
                raise MeshError(f"point {tuple(x)} lies outside the mesh")
            out[n] = hits[0]
        return out


def _label_key(label: str) -> tuple[str, int]:
    return label[0], int(label[1:])


def _barycentric(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    l1 = ((x[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (x[1] - a[:, 1])) / det
    l2 = ((b[:, 0] - a[:, 0]) * (x[1] - a[:, 1]) - (x[0] - a[:, 0]) * (b[:, 1] - a[:, 1])) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edge_owners(triangles: np.ndarray) -> dict[tuple[int, int], list[tuple[int, int, int]]]:
    owners: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for t, (a, b, c) in enumerate(triangles.tolist()):
        for i, j in ((a, b), (b, c), (c, a)):
            owners.setdefault((min(i, j), max(i, j)), []).append((t, i, j))
    return owners


def _oriented_boundary(mesh: Mesh) -> list[tuple[tuple[int, int], str]]:
    owners = _edge_owners(mesh.triangles)
    out = []
    for (i, j), lb in zip(mesh.boundary_edges.tolist(), mesh.boundary_labels):
        (_, a, b), = owners[(min(i, j), max(i, j))]
        out.append(((a, b), lb))
    return out


def _validate(mesh: Mesh) -> None:
    nodes, tris = mesh.nodes, mesh.triangles
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise MeshError("nodes must have shape (N, 2)")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshError("triangles must have shape (T, 3)")
    if len(mesh.regions) != len(tris):
        raise MeshError("one region tag per triangle required")
    if len(mesh.boundary_labels) != len(mesh.boundary_edges):
        raise MeshError("one label per boundary edge required")
    if tris.size and (tris.min() < 0 or tris.max() >= len(nodes)):
        raise MeshError("triangle references a missing node")
    area = signed_areas(nodes, tris)
    bad = np.flatnonzero(~(area > 0))
    if bad.size:
        t = int(bad[0])
        raise MeshError(f"triangle {t} has non-positive signed area {area[t]:.3e} (clockwise or degenerate)")
    for lb in mesh.boundary_labels:
        if len(lb) < 2 or lb[0] not in "wg" or not lb[1:].isdigit():
            raise MeshError(f"invalid boundary label {lb!r}")
    owners = _edge_owners(tris)
    topo = {e for e, own in owners.items() if len(own) == 1}
    seen: set[tuple[int, int]] = set()
    for n, (i, j) in enumerate(mesh.boundary_edges.tolist()):
        key = (min(i, j), max(i, j))
        if len(owners.get(key, [])) != 1:
            raise MeshError(f"boundary edge {n} ({i}, {j}) is not an edge of exactly one triangle")
        if key in seen:
            raise MeshError(f"boundary edge {n} ({i}, {j}) listed twice")
        seen.add(key)
    missing = topo - seen
    if missing:
        raise MeshError(f"{len(missing)} boundary edges are unlabeled, e.g. {sorted(missing)[0]}")


@dataclasses.dataclass(frozen=True)
class ElementGeometry:
    area: float
    basis_gradients: npt.NDArray[np.float64]  # (3, 2)


def element_geometry(mesh: Mesh, t: int) -> ElementGeometry:
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range [0, {mesh.n_triangles})")
    p = mesh.nodes[mesh.triangles[t]]
    area = 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0]))
    g = np.empty((3, 2))
    for i in range(3):
        e = p[(i + 2) % 3] - p[(i + 1) % 3]
        g[i] = (-e[1] / (2 * area), e[0] / (2 * area))
    return ElementGeometry(area=float(area), basis_gradients=g)


# ---------------------------------------------------------------- file format


def load_mesh(text: str) -> Mesh:
    """Parse the ``mesh2d`` text format."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s and not s.startswith("#"):
            lines.append((lineno, s.split()))
    if not lines:
        raise MeshError("empty mesh file")
    lineno, head = lines[0]
    if len(head) != 4 or head[0] != "mesh2d":
        raise MeshError(f"line {lineno}: expected header 'mesh2d <n_nodes> <n_triangles> <n_boundary_edges>'")
    try:
        nn, nt, ne = (int(v) for v in head[1:])
    except ValueError:
        raise MeshError(f"line {lineno}: header counts must be integers") from None
    body = lines[1:]
    if len(body) != nn + nt + ne:
        raise MeshError(f"expected {nn + nt + ne} data lines after header, found {len(body)}")

    nodes = np.empty((nn, 2))
    tris = np.empty((nt, 3), dtype=np.int64)
    regions = np.empty(nt, dtype=np.int64)
    edges = np.empty((ne, 2), dtype=np.int64)
    labels = []
    for k, (ln, tok) in enumerate(body):
        try:
            if k < nn:
                if len(tok) != 2:
                    raise ValueError("node needs 2 coordinates")
                nodes[k] = float(tok[0]), float(tok[1])
            elif k < nn + nt:
                if len(tok) != 4:
                    raise ValueError("triangle needs 3 node indices and a region")
                tris[k - nn] = [int(v) for v in tok[:3]]
                regions[k - nn] = int(tok[3])
            else:
                if len(tok) != 3:
                    raise ValueError("boundary edge needs 2 node indices and a label")
                edges[k - nn - nt] = int(tok[0]), int(tok[1])
                labels.append(tok[2])
        except ValueError as exc:
            raise MeshError(f"line {ln}: {exc}") from None
    if (tris >= nn).any() or (edges >= nn).any() or (tris < 0).any() or (edges < 0).any():
        raise MeshError("node index out of range")
    return Mesh(nodes, tris, regions, edges, tuple(labels))


def dump_mesh(mesh: Mesh, comment: str | None = None) -> str:
    out = []
    if comment:
        out.extend(f"# {c}" for c in comment.splitlines())
    out.append(f"mesh2d {mesh.n_nodes} {mesh.n_triangles} {len(mesh.boundary_edges)}")
    out.extend(f"{x!r} {y!r}" for x, y in mesh.nodes.tolist())
    out.extend(f"{a} {b} {c} {r}" for (a, b, c), r in zip(mesh.triangles.tolist(), mesh.regions.tolist()))
    out.extend(f"{i} {j} {lb}" for (i, j), lb in zip(mesh.boundary_edges.tolist(), mesh.boundary_labels))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- refinement


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four by edge midpoints."""
    tris = mesh.triangles
    all_edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    keys = np.sort(all_edges, axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T  # (T, 3): midpoint of edges (01, 12, 20)
    n0 = mesh.n_nodes
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    nodes = np.concatenate([mesh.nodes, mids])
    a, b, c = tris.T
    mab, mbc, mca = (inv + n0).T
    new_tris = np.concatenate(
        [
            np.stack([a, mab, mca], axis=1),
            np.stack([mab, b, mbc], axis=1),
            np.stack([mca, mbc, c], axis=1),
            np.stack([mab, mbc, mca], axis=1),
        ]
    )
    regions = np.tile(mesh.regions, 4)
    lookup = {(int(i), int(j)): n0 + k for k, (i, j) in enumerate(uniq)}
    edges, labels = [], []
    for (i, j), lb in zip(mesh.boundary_edges.tolist(), mesh.boundary_labels):
        m = lookup[(min(i, j), max(i, j))]
        edges += [(i, m), (m, j)]
        labels += [lb, lb]
    return Mesh(nodes, new_tris, regions, np.array(edges, dtype=np.int64), tuple(labels))


# ---------------------------------------------------------------- T-joint


@dataclasses.dataclass(frozen=True)
class TJointParams:
    """Upper part of a three-limb core: a yoke with three limbs hanging down.

    Gates sit at the lower ends of the limbs (g1 left, g2 center, g3 right);
    w1 is the outer contour, w2/w3 the left/right window contours.
    """

    limb_width: float = 0.4
    window_width: float = 0.6
    window_height: float = 0.8
    yoke_height: float = 0.4
    mesh_size: float = 0.06

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (v > 0 and math.isfinite(v)):
                raise MeshError(f"infeasible T-joint dimension {f.name}={v!r}: must be positive")


def generate_tjoint(params: TJointParams | None = None) -> Mesh:
    p = params or TJointParams()
    w, ww, wh, yh, h = p.limb_width, p.window_width, p.window_height, p.yoke_height, p.mesh_size
    xb = [0.0, w, w + ww, 2 * w + ww, 2 * w + 2 * ww, 3 * w + 2 * ww]
    yb = [0.0, wh, wh + yh]
    xs = _breaks(xb, h)
    ys = _breaks(yb, h)
    x_lo, x_hi = xb[0], xb[-1]
    windows = [(xb[1], xb[2]), (xb[3], xb[4])]

    def inside(x: float, y: float) -> bool:
        if y > wh:
            return x_lo < x < x_hi
        return not any(a < x < b for a, b in windows)

    nx, ny = len(xs), len(ys)
    node_id = -np.ones((nx, ny), dtype=np.int64)
    cells = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            if inside(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])):
                cells.append((i, j))
    nodes = []
    for i, j in cells:
        for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
            if node_id[i + di, j + dj] < 0:
                node_id[i + di, j + dj] = len(nodes)
                nodes.append((xs[i + di], ys[j + dj]))
    tris = []
    for i, j in cells:
        n00, n10, n01, n11 = node_id[i, j], node_id[i + 1, j], node_id[i, j + 1], node_id[i + 1, j + 1]
        if (i + j) % 2 == 0:
            tris += [(n00, n10, n11), (n00, n11, n01)]
        else:
            tris += [(n00, n10, n01), (n10, n11, n01)]
    nodes_arr = np.array(nodes)
    tris_arr = np.array(tris, dtype=np.int64)

    owners = _edge_owners(tris_arr)
    edges, labels = [], []
    for key, own in sorted(owners.items()):
        if len(own) != 1:
            continue
        _, a, b = own[0]
        xm, ym = 0.5 * (nodes_arr[a] + nodes_arr[b])
        if abs(ym - yb[0]) < 1e-12 * max(1.0, yb[-1]):
            lb = "g1" if xm < xb[1] else ("g2" if xm < xb[3] else "g3")
        elif ym <= wh + 1e-12 and windows[0][0] - 1e-12 <= xm <= windows[0][1] + 1e-12:
            lb = "w2"
        elif ym <= wh + 1e-12 and windows[1][0] - 1e-12 <= xm <= windows[1][1] + 1e-12:
            lb = "w3"
        else:
            lb = "w1"
        edges.append((a, b))
        labels.append(lb)
    return Mesh(nodes_arr, tris_arr, np.zeros(len(tris_arr), dtype=np.int64), np.array(edges, dtype=np.int64), tuple(labels))


def _breaks(bounds: list[float], h: float) -> list[float]:
    out = [bounds[0]]
    for a, b in zip(bounds[:-1], bounds[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        out.extend(a + (b - a) * k / n for k in range(1, n + 1))
    return out


def polygon_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def loop_polygon(mesh: Mesh) -> np.ndarray:
    """Boundary loop vertices in counterclockwise order."""
    path: list[int] = []
    for _, nodes in mesh.boundary_loop():
        path.extend(nodes[:-1])
    return mesh.nodes[path]


def n_free_nodes(mesh: Mesh) -> int:
    walls = set()
    for v in mesh.wall_nodes().values():
        walls.update(v.tolist())
    return mesh.n_nodes - len(walls)


def euler_characteristic(mesh: Mesh) -> int:
    owners = _edge_owners(mesh.triangles)
    return mesh.n_nodes - len(owners) + mesh.n_triangles


def label_counts(mesh: Mesh) -> Counter:
    return Counter(mesh.boundary_labels)
