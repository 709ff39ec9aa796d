"""Triangulated polar grids on the unit disk.

The standard grid is a fan of concentric rings: ``rings`` rings of
``angular`` nodes each around a center node, out to radius ``rho_max``.
Node 0 is the center; node ``1 + (k-1)*angular + j`` sits on ring k at
angle ``2 pi j / angular``.  The outermost ring is the Dirichlet boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BallGrid:
    """Simplicial disk: concentric-ring nodes + triangles + boundary ring."""

    rings: int
    angular: int
    rho_max: float
    nodes: np.ndarray = field(init=False, repr=False)
    triangles: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.rings < 2 or self.angular < 3:
            raise ValueError("need at least 2 rings and 3 angular nodes")
        if not (0.0 < self.rho_max < 1.0):
            raise ValueError("rho_max must lie in (0, 1)")
        R, A = self.rings, self.angular
        pts = np.zeros((1 + R * A, 2))
        for k in range(1, R + 1):
            rho = self.rho_max * k / R
            th = 2.0 * np.pi * np.arange(A) / A
            pts[1 + (k - 1) * A: 1 + k * A, 0] = rho * np.cos(th)
            pts[1 + (k - 1) * A: 1 + k * A, 1] = rho * np.sin(th)
        self.nodes = pts
        tris = []
        for j in range(A):
            tris.append((0, 1 + j, 1 + (j + 1) % A))
        for k in range(1, R):
            base0 = 1 + (k - 1) * A
            base1 = 1 + k * A
            for j in range(A):
                j1 = (j + 1) % A
                tris.append((base0 + j, base1 + j, base1 + j1))
                tris.append((base0 + j, base1 + j1, base0 + j1))
        self.triangles = np.asarray(tris, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def boundary_ring(self) -> np.ndarray:
        A = self.angular
        return np.arange(1 + (self.rings - 1) * A, 1 + self.rings * A)

    @property
    def interior(self) -> np.ndarray:
        return np.arange(0, 1 + (self.rings - 1) * self.angular)

    def node_angles(self) -> np.ndarray:
        return np.arctan2(self.nodes[:, 1], self.nodes[:, 0])

    def locate(self, x) -> tuple:
        """Containing triangle's nodes and barycentric weights for x."""
        x = np.asarray(x, dtype=float)
        rho = float(np.hypot(x[0], x[1]))
        if rho > self.rho_max * (1.0 + 1e-12):
            raise ValueError(f"point outside grid (|x|={rho:.6f} > {self.rho_max})")
        R, A = self.rings, self.angular
        dr = self.rho_max / R
        k = min(int(rho / dr), R - 1)        # annulus [k, k+1]
        th = np.arctan2(x[1], x[0]) % (2.0 * np.pi)
        j = min(int(th / (2.0 * np.pi / A)), A - 1)
        cands = []
        if k == 0:
            for jj in (j - 1, j, j + 1):
                cands.append((0, 1 + jj % A, 1 + (jj + 1) % A))
        kk = max(k, 1)
        for jj in (j - 1, j, j + 1):
            base0 = 1 + (kk - 1) * A
            base1 = 1 + kk * A
            j0, j1 = jj % A, (jj + 1) % A
            cands.append((base0 + j0, base1 + j0, base1 + j1))
            cands.append((base0 + j0, base1 + j1, base0 + j1))
        best, best_w, best_m = None, None, -np.inf
        for tri in cands:
            w = _bary(self.nodes[list(tri)], x)
            m = w.min()
            if m > best_m:
                best, best_w, best_m = tri, w, m
        if best_m < -1e-9:
            raise ValueError("point location failed")
        return best, np.clip(best_w, 0.0, None) / np.clip(best_w, 0.0, None).sum()

    def interpolate(self, values: np.ndarray, x) -> float:
        tri, w = self.locate(x)
        return float(values[list(tri)] @ w)

    def cell_areas(self) -> np.ndarray:
        """Barycentric dual-cell Lebesgue areas (1/3 of incident triangles)."""
        out = np.zeros(self.n_nodes)
        p = self.nodes
        t = self.triangles
        a = 0.5 * np.abs(
            (p[t[:, 1], 0] - p[t[:, 0], 0]) * (p[t[:, 2], 1] - p[t[:, 0], 1])
            - (p[t[:, 1], 1] - p[t[:, 0], 1]) * (p[t[:, 2], 0] - p[t[:, 0], 0]))
        for v in range(3):
            np.add.at(out, t[:, v], a / 3.0)
        return out

    def hyperbolic_cell_volumes(self, order: int = 2) -> np.ndarray:
        """Hyperbolic dual-cell volumes: integral of (1-|x|^2)^{-3/2} per cell.

        Uses midpoint-refined triangle quadrature, splitting each triangle
        among its 3 vertices.
        """
        out = np.zeros(self.n_nodes)
        p = self.nodes
        t = self.triangles
        for v in range(3):
            # quadrature points biased toward vertex v: barycentric lumping
            w = np.full(3, 1.0 / 6.0)
            w[v] = 2.0 / 3.0
            q = (p[t[:, 0]] * w[0] + p[t[:, 1]] * w[1] + p[t[:, 2]] * w[2])
            lam3 = (1.0 - (q ** 2).sum(axis=1)) ** 1.5
            a = 0.5 * np.abs(
                (p[t[:, 1], 0] - p[t[:, 0], 0]) * (p[t[:, 2], 1] - p[t[:, 0], 1])
                - (p[t[:, 1], 1] - p[t[:, 0], 1]) * (p[t[:, 2], 0] - p[t[:, 0], 0]))
            np.add.at(out, t[:, v], a / 3.0 / lam3)
        return out


def _bary(tri_pts, x):
    T = np.column_stack([tri_pts[1] - tri_pts[0], tri_pts[2] - tri_pts[0]])
    try:
        st = np.linalg.solve(T, x - tri_pts[0])
    except np.linalg.LinAlgError:
        return np.array([-np.inf, -np.inf, -np.inf])
    return np.array([1.0 - st[0] - st[1], st[0], st[1]])


def candidate_lists(points: np.ndarray, k: int = 20):
    """k-nearest-neighbor candidate lists in CSR form (distance-sorted)."""
    from scipy.spatial import cKDTree

    k = min(k, len(points) - 1)
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k + 1)
    idx = idx[:, 1:]
    indptr = np.arange(0, (len(points) + 1) * k, k, dtype=np.int64)
    return indptr, idx.astype(np.int64).ravel()


def adjacency_from_triangles(n_nodes: int, triangles: np.ndarray):
    """Node -> neighbor-set adjacency of a triangulation."""
    adj = [set() for _ in range(n_nodes)]
    for a, b, c in triangles:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    return adj


def adjacency_closure_lists(points: np.ndarray, triangles: np.ndarray,
                            depth: int = 2):
    """Candidate lists as the triangulation-adjacency closure of given depth,
    distance-sorted, in CSR form.

    Unlike plain kNN these stay direction-balanced on anisotropic meshes, so
    subdifferential cells of interior nodes come out bounded.
    """
    n = len(points)
    adj = adjacency_from_triangles(n, triangles)
    indptr = np.zeros(n + 1, dtype=np.int64)
    parts = []
    for i in range(n):
        ring = {i}
        acc = set()
        for _ in range(depth):
            nxt = set()
            for j in ring:
                nxt |= adj[j]
            nxt -= acc
            nxt.discard(i)
            acc |= nxt
            ring = nxt
        cand = np.fromiter(acc, dtype=np.int64, count=len(acc))
        d = ((points[cand] - points[i]) ** 2).sum(axis=1)
        parts.append(cand[np.argsort(d)])
        indptr[i + 1] = indptr[i] + len(cand)
    return indptr, np.concatenate(parts)
