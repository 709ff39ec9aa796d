"""The d=2 equivariant Minkowski problem on a quotient mesh.

A tau-equivariant support function is stored by its values on the classes
of a side-pairing-consistent triangulation of a Dirichlet fundamental
polygon.  Evaluation anywhere in the ball transports the point into the
domain by pairing words and pulls the value back through the isometry
action on ball support functions.

Solvers mirror the Dirichlet module: per-class subdifferential cell areas
on a collar-extended point cloud, with either damped Newton (class-coupled
Jacobian) or monotone descent sweeps.  Covolume is computed by Gauss-
Legendre quadrature of the first-variation formula along the segment from
the maximal domain's support function.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .convexfn import BoundaryData, PLFunctionB, envelope_evaluator
from .core import (Cocycle, DirichletPolygon, Isometry, ball_lambda,
                   dirichlet_polygon, hat, lorentz_inverse, mink_inner, orbit,
                   projective_action, projective_action_many, radial_map)
from .dirichlet import SolveReport, SolverError, _residual_scale
from .measure import _lower_hull_facets

PAIRING_MATCH_TOL = 1e-6


def _hyp_dist(p, q):
    return float(np.arccosh(max(1.0, -mink_inner(p, q))))


def _transport_coeffs(iso: Isometry, x_target, x_source):
    """(scale, shift) with h(x_target) = scale h(x_source) + shift when
    x_target = iso_bar(x_source) and h is the iso-equivariant support."""
    scale = ball_lambda(x_target) / ball_lambda(x_source)
    shift = mink_inner(hat(x_target), iso.translation)
    return float(scale), float(shift)


@dataclass
class QuotientMesh:
    """Triangulated Dirichlet polygon with side-pairing node identification.

    Nodes are arranged as scaled copies ("rings") of the polygon boundary
    around the basepoint; boundary nodes are hyperbolic-arclength-uniform
    per edge so every pairing maps nodes onto nodes.  ``cls[i]`` is the
    quotient class of node i; class representatives carry the unknowns and
    every other member stores (scale, shift) with
    ``h_member = scale * h_rep + shift``.
    """

    cocycle: Cocycle
    polygon: DirichletPolygon
    rings: int = 24
    per_edge: int = 12
    collar_margin: float = 2.5

    def __post_init__(self):
        self._build_nodes()
        self._identify_classes()
        self._build_collar()
        self._finalize_cloud()

    # ------------------------------------------------------------------ mesh
    def _build_nodes(self):
        poly = self.polygon
        V = poly.vertices
        ns = len(V)
        s = self.per_edge
        bnd = []
        self.edge_of = []          # edge index per boundary node
        for k in range(ns):
            A3 = radial_map(V[k])
            B3 = radial_map(V[(k + 1) % ns])
            L = _hyp_dist(A3, B3)
            u = (B3 + mink_inner(B3, A3) * A3)
            u = u / np.sqrt(mink_inner(u, u))
            for i in range(s):
                t = L * i / s
                P = np.cosh(t) * A3 + np.sinh(t) * u
                bnd.append(P[:2] / P[2])
                self.edge_of.append(k)
        bnd = np.asarray(bnd)
        B = len(bnd)
        m = self.rings
        # rings graded uniformly in hyperbolic distance along each ray
        rb = np.hypot(bnd[:, 0], bnd[:, 1])
        dirs = bnd / rb[:, None]
        Db = np.arctanh(rb)
        nodes = [np.zeros((1, 2))]
        for k in range(1, m + 1):
            rk = np.tanh(Db * k / m)
            nodes.append(dirs * rk[:, None])
        self.nodes = np.vstack(nodes)
        tris = []
        for j in range(B):
            tris.append((0, 1 + j, 1 + (j + 1) % B))
        for k in range(1, m):
            b0 = 1 + (k - 1) * B
            b1 = 1 + k * B
            for j in range(B):
                j1 = (j + 1) % B
                tris.append((b0 + j, b1 + j, b1 + j1))
                tris.append((b0 + j, b1 + j1, b0 + j1))
        self.triangles = np.asarray(tris, dtype=np.int64)
        self.n_boundary = B
        self.boundary_nodes = np.arange(1 + (m - 1) * B, 1 + m * B)
        self.interior_nodes = np.arange(0, 1 + (m - 1) * B)

    # ---------------------------------------------------------------- classes
    def _identify_classes(self):
        poly = self.polygon
        n = len(self.nodes)
        parent = np.arange(n)

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

        # node u on edge k maps to a boundary node by the inverse pairing
        matches = []   # (u, v, pairing word) with x_u = pairing_bar(x_v)
        bidx = self.boundary_nodes
        bpos = self.nodes[bidx]
        for t, u in enumerate(bidx):
            k = self.edge_of[t]
            w = poly.pairings[k]
            gi = lorentz_inverse(poly.lattice.word_matrix(w))
            y = projective_action(gi, self.nodes[u])
            d = ((bpos - y) ** 2).sum(axis=1)
            j = int(np.argmin(d))
            if d[j] > PAIRING_MATCH_TOL ** 2:
                raise ValueError(
                    f"side pairing does not map nodes to nodes "
                    f"(miss {np.sqrt(d[j]):.2e}); mesh is inconsistent")
            v = int(bidx[j])
            matches.append((int(u), v, w))
            union(int(u), v)

        self.cls = np.array([find(i) for i in range(n)])
        uniq, self.cls = np.unique(self.cls, return_inverse=True)
        self.n_classes = len(uniq)
        self.class_rep = np.zeros(self.n_classes, dtype=np.int64)
        for c in range(self.n_classes):
            self.class_rep[c] = np.where(self.cls == c)[0][0]

        # transports member -> rep along a spanning tree of the matches
        self.node_scale = np.ones(n)
        self.node_shift = np.zeros(n)
        iso_of = {}
        graph = {}
        for u, v, w in matches:
            graph.setdefault(v, []).append((u, w, False))
            graph.setdefault(u, []).append((v, w, True))
        for c in range(self.n_classes):
            rep = int(self.class_rep[c])
            iso_of[rep] = Isometry.identity(2)
            stack = [rep]
            seen = {rep}
            while stack:
                v = stack.pop()
                for (u, w, inv) in graph.get(v, []):
                    if u in seen:
                        continue
                    g = self.cocycle.isometry(w)
                    if inv:
                        g = g.inverse()
                    iso_of[u] = g.compose(iso_of[v])
                    seen.add(u)
                    stack.append(u)
            for u in seen:
                if u == rep:
                    continue
                sc, sh = _transport_coeffs(iso_of[u], self.nodes[u],
                                           self.nodes[rep])
                self.node_scale[u] = sc
                self.node_shift[u] = sh

    # ----------------------------------------------------------------- collar
    def _build_collar(self):
        """Transported copies of mesh nodes in a neighborhood of the domain."""
        poly = self.polygon
        lat = poly.lattice
        # enumerate group elements whose tile can touch the enlarged domain
        r_v = max(_hyp_dist(radial_map(v), np.array([0.0, 0.0, 1.0]))
                  for v in poly.vertices)
        med, mx = self._edge_hyp_stats()
        hmargin = max(self.collar_margin * med, 1.2 * mx)
        self.hmargin = hmargin
        reach = 2.0 * r_v + hmargin + 0.2
        elements = []      # (word, Isometry)
        seen = set()
        frontier = [("", Isometry.identity(2))]
        seen.add(self._mat_key(np.eye(3)))
        letters = lat.letters + lat.letters.upper()
        origin = np.array([0.0, 0.0, 1.0])
        for _ in range(12):
            nxt = []
            for w, g in frontier:
                for ch in letters:
                    if w and w[-1] == ch.swapcase():
                        continue
                    g2 = g.compose(self.cocycle.isometry(ch))
                    key = self._mat_key(g2.linear)
                    if key in seen:
                        continue
                    seen.add(key)
                    if _hyp_dist(g2.linear @ origin, origin) > reach:
                        continue
                    elements.append((w + ch, g2))
                    nxt.append((w + ch, g2))
            frontier = nxt
            if not frontier:
                break
        self._star = elements

        # keep transported nodes within hyperbolic margin of the boundary ring
        bpos3 = np.array([radial_map(self.nodes[b]) for b in self.boundary_nodes])
        collar_pos, collar_cls, collar_scale, collar_shift = [], [], [], []
        J = np.diag([1.0, 1.0, -1.0])
        for w, g in elements:
            img = projective_action_many(g.linear, self.nodes)
            keep = (img ** 2).sum(axis=1) < 1.0 - 1e-10
            img3 = np.column_stack([img[keep], np.ones(keep.sum())])
            lam = np.sqrt(1.0 - (img[keep] ** 2).sum(axis=1))
            img3 = img3 / lam[:, None]
            dots = -(img3 @ (J @ bpos3.T))
            dmin = np.arccosh(np.clip(dots.min(axis=1), 1.0, None))
            inside = np.array([self.polygon.contains(p, tol=1e-9)
                               for p in img[keep]])
            sel = np.where((dmin <= hmargin) & ~inside)[0]
            idx_keep = np.where(keep)[0]
            for t in sel:
                i = int(idx_keep[t])
                x_new = img[idx_keep[t]]
                sc, sh = _transport_coeffs(g, x_new, self.nodes[i])
                collar_pos.append(x_new)
                collar_cls.append(self.cls[i])
                collar_scale.append(sc * self.node_scale[i])
                collar_shift.append(sc * self.node_shift[i] + sh)
        pos = (np.asarray(collar_pos).reshape(-1, 2)
               if collar_pos else np.zeros((0, 2)))
        ccls = np.asarray(collar_cls, dtype=np.int64)
        cscale = np.asarray(collar_scale)
        cshift = np.asarray(collar_shift)
        # adjacent tiles share edges: drop coincident copies
        if len(pos):
            key = np.round(pos / 1e-9).astype(np.int64)
            _, first = np.unique(key, axis=0, return_index=True)
            first = np.sort(first)
            pos, ccls = pos[first], ccls[first]
            cscale, cshift = cscale[first], cshift[first]
        self.collar_pos = pos
        self.collar_cls = ccls
        self.collar_scale = cscale
        self.collar_shift = cshift

    def _edge_hyp_stats(self) -> tuple:
        p = self.nodes
        t = self.triangles
        lens = []
        for a, b in ((0, 1), (1, 2), (0, 2)):
            pa = np.column_stack([p[t[:, a]], np.ones(len(t))])
            pb = np.column_stack([p[t[:, b]], np.ones(len(t))])
            la = np.sqrt(1.0 - (p[t[:, a]] ** 2).sum(axis=1))
            lb = np.sqrt(1.0 - (p[t[:, b]] ** 2).sum(axis=1))
            dots = (pa[:, 0] * pb[:, 0] + pa[:, 1] * pb[:, 1]
                    - pa[:, 2] * pb[:, 2]) / (la * lb)
            lens.append(np.arccosh(np.clip(-dots, 1.0, None)))
        lens = np.concatenate(lens)
        return float(np.median(lens)), float(lens.max())

    @staticmethod
    def _mat_key(m):
        return tuple(np.round(np.asarray(m) / 1e-9).astype(np.int64).ravel())

    # ------------------------------------------------------------------ cloud
    def _finalize_cloud(self):
        n = len(self.nodes)
        self.cloud_pos = np.vstack([self.nodes, self.collar_pos])
        self.cloud_cls = np.concatenate([self.cls, self.collar_cls])
        self.cloud_scale = np.concatenate([self.node_scale, self.collar_scale])
        self.cloud_shift = np.concatenate([self.node_shift, self.collar_shift])
        self.cloud_lambda = np.sqrt(1.0 - (self.cloud_pos ** 2).sum(axis=1))
        # adjacency: mesh triangles + transported triangles that fit the cloud
        from scipy.spatial import cKDTree

        tree = cKDTree(self.cloud_pos)
        extra = []
        for w, g in self._star:
            img = projective_action_many(g.linear, self.nodes)
            d, idx = tree.query(img)
            remap = np.where(d < 1e-9, idx, -1)
            for tri in self.triangles:
                a, b, c = remap[tri[0]], remap[tri[1]], remap[tri[2]]
                if min(a, b, c) >= 0 and max(a, b, c) >= n:
                    extra.append((a, b, c))
        self.cloud_triangles = np.vstack(
            [self.triangles, np.asarray(extra, dtype=np.int64).reshape(-1, 3)])
        self.class_lambda = self.cloud_lambda[self.class_rep]

    # ----------------------------------------------------------- measures etc
    def refresh_cloud(self, class_values: np.ndarray) -> np.ndarray:
        return (self.cloud_scale * class_values[self.cloud_cls]
                + self.cloud_shift)

    def class_cell_volumes(self) -> np.ndarray:
        """Hyperbolic dual-cell volumes per quotient class (member-summed)."""
        p = self.nodes
        t = self.triangles
        out = np.zeros(self.n_classes)
        for v in range(3):
            w = np.full(3, 1.0 / 6.0)
            w[v] = 2.0 / 3.0
            q = p[t[:, 0]] * w[0] + p[t[:, 1]] * w[1] + p[t[:, 2]] * w[2]
            lam3 = (1.0 - (q ** 2).sum(axis=1)) ** 1.5
            a = 0.5 * np.abs(
                (p[t[:, 1], 0] - p[t[:, 0], 0]) * (p[t[:, 2], 1] - p[t[:, 0], 1])
                - (p[t[:, 1], 1] - p[t[:, 0], 1]) * (p[t[:, 2], 0] - p[t[:, 0], 0]))
            np.add.at(out, self.cls[t[:, v]], a / 3.0 / lam3)
        return out

    def class_masses(self, class_values: np.ndarray) -> np.ndarray:
        """Hull-based MA mass of every class, measured at its representative."""
        hv = self.refresh_cloud(class_values)
        grads, fptr, fidx, _, _ = _lower_hull_facets(self.cloud_pos, hv)
        if len(grads) == 0:
            return np.zeros(self.n_classes)
        areas = kernels.facet_polygon_areas(grads, fptr, fidx)
        return np.asarray(areas)[self.class_rep]

    # --------------------------------------------------------------- location
    def locate(self, x):
        """Containing triangle + barycentric weights for x in the polygon."""
        x = np.asarray(x, dtype=float)
        B = self.n_boundary
        m = self.rings
        bpos = self.nodes[self.boundary_nodes]
        bang = np.arctan2(bpos[:, 1], bpos[:, 0])
        order = np.argsort(bang)
        th = np.arctan2(x[1], x[0])
        jj = np.searchsorted(bang[order], th) % B
        cands = set()
        for dj in (-2, -1, 0, 1):
            j = int(order[(jj + dj) % B])
            rb = np.hypot(*bpos[j])
            r = min(np.hypot(*x), rb * (1 - 1e-12))
            k_est = int(np.clip(np.arctanh(r) / np.arctanh(rb) * m, 0, m - 1))
            for kk in range(max(0, k_est - 2), min(m - 1, k_est + 2) + 1):
                for j2 in (j - 1, j, j + 1):
                    j2 %= B
                    if kk == 0:
                        cands.add((0, 1 + j2, 1 + (j2 + 1) % B))
                    else:
                        b0 = 1 + (kk - 1) * B
                        b1 = 1 + kk * B
                        j3 = (j2 + 1) % B
                        cands.add((b0 + j2, b1 + j2, b1 + j3))
                        cands.add((b0 + j2, b1 + j3, b0 + j3))
        best, best_w, best_m = None, None, -np.inf
        for tri in cands:
            P = self.nodes[list(tri)]
            T = np.column_stack([P[1] - P[0], P[2] - P[0]])
            try:
                st = np.linalg.solve(T, x - P[0])
            except np.linalg.LinAlgError:
                continue
            wts = np.array([1.0 - st.sum(), st[0], st[1]])
            if wts.min() > best_m:
                best, best_w, best_m = tri, wts, wts.min()
        if best is None or best_m < -1e-7:
            raise ValueError("point location failed on the quotient mesh")
        w = np.clip(best_w, 0.0, None)
        return best, w / w.sum()

    def reduce_to_domain(self, x, max_steps: int = 200):
        """Transport x into the polygon: returns (y, iso) with x = iso_bar(y)."""
        poly = self.polygon
        x = np.asarray(x, dtype=float)
        iso = Isometry.identity(2)
        for _ in range(max_steps):
            viol, worst = None, 1e-12
            nverts = len(poly.vertices)
            for k in range(nverts):
                a = poly.vertices[k]
                b = poly.vertices[(k + 1) % nverts]
                e = b - a
                val = e[0] * (x[1] - a[1]) - e[1] * (x[0] - a[0])
                if val < -worst:
                    worst, viol = -val, k
            if viol is None:
                return x, iso
            g = self.cocycle.isometry(poly.pairings[viol])
            x = projective_action(lorentz_inverse(g.linear), x)
            iso = iso.compose(g)
        raise ValueError("domain reduction did not terminate")


@dataclass
class InvariantMeasure:
    """Nonnegative masses on the quotient classes of a QuotientMesh."""

    mesh: QuotientMesh
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.mesh.n_classes,):
            raise ValueError("one mass per quotient class required")
        if self.mass.min() < 0:
            raise ValueError("masses must be nonnegative")

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @classmethod
    def constant_curvature(cls, mesh: QuotientMesh, t: float) -> "InvariantMeasure":
        """A = t^2 times the hyperbolic volume (the rescaled-hyperboloid law)."""
        return cls(mesh, t * t * mesh.class_cell_volumes())


@dataclass
class EquivariantSupport:
    """tau-equivariant ball support function on a quotient mesh."""

    mesh: QuotientMesh
    class_values: np.ndarray
    h_tau_values: np.ndarray = None     # h_tau at class representatives

    def __post_init__(self):
        self.class_values = np.asarray(self.class_values, dtype=float)
        if self.class_values.shape != (self.mesh.n_classes,):
            raise ValueError("one value per quotient class required")
        if self.h_tau_values is not None:
            self.h_tau_values = np.asarray(self.h_tau_values, dtype=float)

    def domain_values(self) -> np.ndarray:
        m = self.mesh
        return (m.node_scale * self.class_values[m.cls] + m.node_shift)

    def hbar(self) -> np.ndarray:
        """Hyperbolic support values h/lambda at class representatives."""
        return self.class_values / self.mesh.class_lambda

    def __call__(self, x) -> float:
        m = self.mesh
        y, iso = m.reduce_to_domain(x)
        tri, w = m.locate(y)
        vals = m.node_scale[list(tri)] * self.class_values[m.cls[list(tri)]] \
            + m.node_shift[list(tri)]
        hy = float(vals @ w)
        z = ball_lambda(x) / ball_lambda(y)
        return z * hy + mink_inner(hat(x), iso.translation)

    def copy(self) -> "EquivariantSupport":
        return EquivariantSupport(self.mesh, self.class_values.copy(),
                                  None if self.h_tau_values is None
                                  else self.h_tau_values.copy())

    def equivariance_error(self, n_points: int = 200, seed: int = 0) -> float:
        """max over random points of |(gamma_tau . h)(x) - h(x)| per generator."""
        m = self.mesh
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(n_points, 2))
        pts = 0.6 * pts / np.maximum(1.0, np.linalg.norm(pts, axis=1))[:, None]
        err = 0.0
        for letter in m.polygon.lattice.letters:
            g = self.cocycle_iso(letter)
            gi = lorentz_inverse(g.linear)
            for x in pts:
                y = projective_action(gi, x)
                z = ball_lambda(x) / ball_lambda(y)
                acted = z * self(y) + mink_inner(hat(x), g.translation)
                err = max(err, abs(acted - self(x)))
        return err

    def cocycle_iso(self, word) -> Isometry:
        return self.mesh.cocycle.isometry(word)

    def side_pairing_error(self) -> float:
        """Consistency of stored values across identified boundary nodes."""
        m = self.mesh
        vals = self.domain_values()
        err = 0.0
        for c in range(m.n_classes):
            members = np.where(m.cls == c)[0]
            if len(members) < 2:
                continue
            rep = m.class_rep[c]
            for u in members:
                pred = m.node_scale[u] * vals[rep] + m.node_shift[u]
                err = max(err, abs(vals[u] - pred))
        return err


def h_tau_evaluator(cocycle: Cocycle, g_tau: BoundaryData | None = None):
    """Support function of the maximal invariant domain, as an evaluator.

    Exact for the zero cocycle (0) and coboundaries (<(x,1), t0>); otherwise
    the convex envelope of the supplied boundary trace g_tau.
    """
    if cocycle.is_zero:
        return lambda x: 0.0
    t0 = cocycle.coboundary_point()
    if t0 is not None:
        return lambda x: mink_inner(hat(x), t0)
    if g_tau is None:
        raise ValueError("general cocycle needs a boundary trace g_tau")
    return envelope_evaluator(g_tau)


def compute_h_tau(cocycle: Cocycle, seed_point=None, depth: int = 6,
                  n_angles: int = 512, mesh: QuotientMesh | None = None):
    """Boundary trace g_tau and domain data from orbit support hulls.

    Builds h_depth = support of the orbit of a deep seed point, reports the
    trace stability gap between successive depths, and returns
    (g_tau, h_tau evaluator, gaps).
    """
    if seed_point is None:
        seed_point = np.array([0.0, 0.0, 3.0])
    t0 = cocycle.coboundary_point()
    if t0 is not None:
        seed_point = np.asarray(seed_point, dtype=float) + t0
    ang = 2.0 * np.pi * np.arange(n_angles) / n_angles
    ell = np.column_stack([np.cos(ang), np.sin(ang), np.ones(n_angles)])
    gaps = []
    prev = None
    trace = None
    for dep in range(max(1, depth - 2), depth + 1):
        pts, _ = orbit(cocycle, seed_point, dep)
        vals = ell[:, :2] @ pts[:, :2].T - np.outer(ell[:, 2], pts[:, 2])
        trace = vals.max(axis=1)
        if prev is not None:
            gaps.append(float(np.abs(trace - prev).max()))
        prev = trace
    g_tau = BoundaryData(ang, trace)
    htau = h_tau_evaluator(cocycle, g_tau)
    if len(gaps) >= 2 and gaps[-1] > gaps[0] + 1e-12:
        import warnings
        warnings.warn(f"orbit trace gap not decreasing: {gaps}")
    return g_tau, htau, gaps


def orbit_support(cocycle: Cocycle, mesh: QuotientMesh, seed_point=None,
                  depth: int = 6) -> EquivariantSupport:
    """Equivariant support function of an orbit hull, sampled on the mesh."""
    if seed_point is None:
        seed_point = np.array([0.0, 0.0, 3.0])
    t0 = cocycle.coboundary_point()
    if t0 is not None:
        seed_point = np.asarray(seed_point, dtype=float) + t0
    pts, _ = orbit(cocycle, seed_point, depth)
    reps = mesh.nodes[mesh.class_rep]
    xh = np.column_stack([reps, np.ones(len(reps))])
    vals = (xh[:, :2] @ pts[:, :2].T - np.outer(xh[:, 2], pts[:, 2])).max(axis=1)
    htau = h_tau_evaluator(cocycle, compute_h_tau(cocycle, seed_point, depth)[0]
                           if (t0 is None and not cocycle.is_zero) else None)
    htv = np.array([htau(x) for x in reps])
    return EquivariantSupport(mesh, vals, htv)


# ---------------------------------------------------------------- solver


class _ClassSystem:
    """Per-class cell system on the collar-extended cloud."""

    def __init__(self, mesh: QuotientMesh, depth: int = 2):
        self.mesh = mesh
        self.depth = depth
        self.reps = mesh.class_rep.astype(np.int64)
        self._build(depth)

    def _build(self, depth, extra_edges=None):
        m = self.mesh
        npts = len(m.cloud_pos)
        adj = [set() for _ in range(npts)]
        for a, b, c in m.cloud_triangles:
            adj[a].update((b, c))
            adj[b].update((a, c))
            adj[c].update((a, b))
        if extra_edges is not None:
            for a, b in extra_edges:
                adj[a].add(int(b))
                adj[b].add(int(a))
        indptr = np.zeros(len(self.reps) + 1, dtype=np.int64)
        parts, couples = [], []
        for t, i in enumerate(self.reps):
            ring = {int(i)}
            acc = set()
            for _ in range(depth):
                nxt = set()
                for j in ring:
                    nxt |= adj[j]
                nxt -= acc
                nxt.discard(int(i))
                acc |= nxt
                ring = nxt
            cand = np.fromiter(acc, dtype=np.int64, count=len(acc))
            d = ((m.cloud_pos[cand] - m.cloud_pos[i]) ** 2).sum(axis=1)
            cand = cand[np.argsort(d)]
            parts.append(cand)
            cpl = np.where(m.cloud_cls[cand] == m.cloud_cls[i],
                           m.cloud_scale[cand], 0.0)
            couples.append(cpl)
            indptr[t + 1] = indptr[t] + len(cand)
        self.indptr = indptr
        self.indices = np.concatenate(parts)
        self.couple = np.concatenate(couples)

    def widen(self, hull_edges=None):
        if hull_edges is None:
            self.depth += 1
        self._build(self.depth, extra_edges=hull_edges)

    def masses(self, class_values: np.ndarray) -> np.ndarray:
        m = self.mesh
        hv = m.refresh_cloud(class_values)
        areas, _ = kernels.cell_areas(m.cloud_pos, hv, self.reps,
                                      self.indptr, self.indices)
        return areas

    def masses_jacobian(self, class_values: np.ndarray):
        m = self.mesh
        hv = m.refresh_cloud(class_values)
        areas, _, jptr, jslots, jvals = kernels.cell_areas_jacobian(
            m.cloud_pos, hv, self.reps, self.indptr, self.indices)
        nC = m.n_classes
        rows, cols, vals = [], [], []
        diag = np.zeros(nC)
        for c in range(nC):
            sl = jslots[jptr[c]:jptr[c + 1]]
            w = jvals[jptr[c]:jptr[c + 1]]
            nbr = self.indices[self.indptr[c] + sl]
            rows.append(np.full(len(sl), c))
            cols.append(m.cloud_cls[nbr])
            vals.append(w * m.cloud_scale[nbr])
            diag[c] = -w.sum()
        rows = np.concatenate(rows + [np.arange(nC)])
        cols = np.concatenate(cols + [np.arange(nC)])
        vals = np.concatenate(vals + [diag])
        J = sp.csr_matrix((vals, (rows, cols)), shape=(nC, nC))
        return areas, J

    def convexify_classes(self, class_values: np.ndarray) -> np.ndarray:
        """Project class values down to the glued lower hull."""
        m = self.mesh
        hv = m.refresh_cloud(class_values)
        from .convexfn import hull_values

        hull_at_reps = hull_values(m.cloud_pos, hv, m.cloud_pos[self.reps])
        return np.minimum(class_values, hull_at_reps)


def solve_equivariant(mu: InvariantMeasure, cocycle: Cocycle,
                      mesh: QuotientMesh | None = None, tol: float = 1e-3,
                      engine: str = "auto", initial: np.ndarray | None = None,
                      max_sweeps: int = 500, clamp: float = 1e-9,
                      verbose: bool = False):
    """Solve A-mass(class) = mu(class) for a tau-convex support function.

    Targets are Lorentzian area masses; internally converted to MA masses
    through mass_MA = mass_A / lambda(rep).  Returns
    (EquivariantSupport, SolveReport).
    """
    m = mu.mesh if mesh is None else mesh
    reps = m.class_rep
    htau = h_tau_evaluator(cocycle, None) if (cocycle.is_zero or
                                              cocycle.coboundary_point() is not None) \
        else h_tau_evaluator(cocycle, compute_h_tau(cocycle)[0])
    htv = np.array([htau(x) for x in m.nodes[reps]])
    lam = m.class_lambda
    mu_ma = mu.mass / lam
    sys_ = _ClassSystem(m)
    scale = _residual_scale(mu_ma)

    if initial is not None:
        hc = np.asarray(initial, dtype=float).copy()
    else:
        hc = htv - clamp * lam
    use_newton = engine == "newton" or (engine == "auto" and mu_ma.min() > 0)
    if use_newton and initial is None:
        # start on a rescaled hyperboloid whose total mass matches mu
        t_guess = np.sqrt(max(mu.total, 1e-12) / max(m.class_cell_volumes().sum(), 1e-12))
        hc = htv - max(t_guess, 1e-3) * lam

    report = None
    out_vals = None
    rel = None
    for attempt in range(4):
        if use_newton:
            hc, report = _newton_classes(sys_, hc, mu_ma, tol, scale,
                                         verbose=verbose)
            if not report.converged:
                if engine == "newton":
                    raise SolverError("newton engine stalled "
                                      f"at {report.max_residual:.3e}", report)
                use_newton = False
                hc = htv - clamp * lam
        if not use_newton:
            hc, report = _monotone_classes(sys_, hc, mu_ma, tol, scale,
                                           max_sweeps=max_sweeps)
            if not report.converged:
                raise SolverError(
                    f"no convergence after {report.iterations} sweeps "
                    f"(residual {report.max_residual:.3e})", report)
        out_vals = sys_.convexify_classes(hc)
        cert = m.class_masses(out_vals)
        rel = np.abs(cert - mu_ma) / scale
        if rel.max() <= 2.0 * tol:
            break
        hv = m.refresh_cloud(out_vals)
        from .measure import lower_hull_edges

        sys_.widen(lower_hull_edges(m.cloud_pos, hv))
        hc = out_vals.copy()
    else:
        raise SolverError(f"hull certificate stuck at {rel.max():.3e}", report)

    report.residuals = rel
    report.max_residual = float(rel.max())
    touches = bool(np.any(htv - out_vals < 10 * clamp * lam))
    sol = EquivariantSupport(m, out_vals, htv)
    sol.touches_boundary = touches
    return sol, report


def _newton_classes(sys_: _ClassSystem, hc, mu_ma, tol, scale, max_iter=80,
                    verbose=False):
    hc = hc.copy()
    m0 = sys_.masses(hc)
    floor = 0.5 * min(m0.min(), mu_ma.min()) if min(m0.min(), mu_ma.min()) > 0 \
        else 0.0
    for it in range(max_iter):
        mss, J = sys_.masses_jacobian(hc)
        rel = np.abs(mss - mu_ma) / scale
        if rel.max() <= tol:
            return hc, SolveReport(True, it, float(rel.max()), rel, "newton")
        try:
            delta = spla.spsolve(J.tocsc(), -(mss - mu_ma))
        except Exception:
            return hc, SolveReport(False, it, float(rel.max()), rel, "newton")
        if not np.all(np.isfinite(delta)):
            return hc, SolveReport(False, it, float(rel.max()), rel, "newton")
        alpha, norm0 = 1.0, rel.max()
        while alpha > 1e-7:
            h_try = hc + alpha * delta
            m_try = sys_.masses(h_try)
            rel_try = np.abs(m_try - mu_ma) / scale
            if m_try.min() >= floor and rel_try.max() < norm0:
                break
            alpha *= 0.5
        else:
            return hc, SolveReport(False, it, float(rel.max()), rel, "newton")
        hc = h_try
        if verbose:
            print(f"eq newton it={it} res={rel_try.max():.3e} alpha={alpha}")
    mss = sys_.masses(hc)
    rel = np.abs(mss - mu_ma) / scale
    return hc, SolveReport(rel.max() <= tol, max_iter, float(rel.max()), rel,
                           "newton")


def _monotone_classes(sys_: _ClassSystem, hc, mu_ma, tol, scale,
                      max_sweeps=500):
    hc = hc.copy()
    m = sys_.mesh
    order0 = np.arange(len(mu_ma), dtype=np.int64)
    for sweep in range(max_sweeps):
        mss = sys_.masses(hc)
        deficit = (mu_ma - mss) / scale
        if deficit.max() <= tol:
            rel = np.abs(mss - mu_ma) / scale
            return hc, SolveReport(True, sweep, float(rel.max()), rel,
                                   "monotone")
        sel = order0[np.argsort(-deficit)]
        sel = sel[deficit[sel] > tol]
        hv = m.refresh_cloud(hc)
        ptr = np.zeros(len(sel) + 1, dtype=np.int64)
        idx_parts, cpl_parts = [], []
        for t, c in enumerate(sel):
            idx_parts.append(sys_.indices[sys_.indptr[c]:sys_.indptr[c + 1]])
            cpl_parts.append(sys_.couple[sys_.indptr[c]:sys_.indptr[c + 1]])
            ptr[t + 1] = ptr[t] + len(idx_parts[-1])
        idx = np.concatenate(idx_parts)
        cpl = np.concatenate(cpl_parts)
        moved, _ = kernels.monotone_sweep(
            m.cloud_pos, hv, mu_ma[sel], m.class_rep[sel].astype(np.int64),
            ptr, idx, cpl, 1e-10)
        if moved < 0:
            raise SolverError("monotone sweep: runaway class")
        hc = hv[m.class_rep]     # reps carry the updated values
        hc = sys_.convexify_classes(hc)
    mss = sys_.masses(hc)
    rel = np.abs(mss - mu_ma) / scale
    return hc, SolveReport(False, max_sweeps, float(rel.max()), rel, "monotone")


# ------------------------------------------------------------- functionals


def tmin_tmax(h: EquivariantSupport) -> tuple:
    """Cosmological-time extrema: (min, max) of (h_tau - h)/lambda."""
    if h.h_tau_values is None:
        raise ValueError("h_tau values missing on the support")
    diff = (h.h_tau_values - h.class_values) / h.mesh.class_lambda
    return float(diff.min()), float(diff.max())


def total_area(h: EquivariantSupport) -> float:
    """Total Lorentzian area over the quotient: sum of lambda MA masses."""
    mass = h.mesh.class_masses(h.class_values)
    return float((h.mesh.class_lambda * mass).sum())


def monotonicity_check(h0: EquivariantSupport, h1: EquivariantSupport,
                       tol: float = 1e-9) -> dict:
    """Area(K0) <= Area(K1) for nested K1 subset K0 (h1 <= h0 nodewise)."""
    if np.any(h1.class_values > h0.class_values + 1e-12):
        raise ValueError("monotonicity check needs h1 <= h0 nodewise")
    a0, a1 = total_area(h0), total_area(h1)
    return {"area_outer": a0, "area_inner": a1,
            "monotone": bool(a0 <= a1 + tol * (1 + abs(a1)))}


def covolume(h: EquivariantSupport, quad_order: int = 8,
             threads: int | None = None) -> float:
    """covol(h) via Gauss-Legendre quadrature of the variation formula
    along h_t = (1-t) h_tau + t h, using that A(h_tau) = 0:

        covol(h) = int_0^1 int (hbar_tau - hbar) dA(hbar_t) dt.
    """
    m = h.mesh
    if h.h_tau_values is None:
        raise ValueError("h_tau values missing on the support")
    gap = h.h_tau_values - h.class_values
    if gap.min() < -1e-9:
        raise ValueError("covolume requires h <= h_tau")
    fbar = gap / m.class_lambda        # hbar_tau - hbar >= 0
    tnodes, tweights = np.polynomial.legendre.leggauss(quad_order)
    tnodes = 0.5 * (tnodes + 1.0)
    tweights = 0.5 * tweights

    def one(t):
        vals = (1.0 - t) * h.h_tau_values + t * h.class_values
        mass = m.class_masses(vals)
        return float((fbar * m.class_lambda * mass).sum())

    n_threads = threads
    if n_threads is None:
        n_threads = int(os.environ.get("MINKPROB_THREADS", "0") or 0)
    if n_threads and n_threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            contribs = list(ex.map(one, tnodes))
    else:
        contribs = [one(t) for t in tnodes]
    return float(np.dot(tweights, contribs))


def covol_fuchsian(h: EquivariantSupport) -> float:
    """Fuchsian representation covol = -(1/(d+1)) int hbar dA(hbar), d=2."""
    if not h.mesh.cocycle.is_zero:
        raise ValueError("covol_fuchsian applies to the zero cocycle only")
    mass = h.mesh.class_masses(h.class_values)
    hbar = h.hbar()
    return float(-(hbar * h.mesh.class_lambda * mass).sum() / 3.0)


def L_mu(h: EquivariantSupport, mu: InvariantMeasure,
         quad_order: int = 8) -> float:
    """Variational functional covol(h) - int (hbar_tau - hbar) d mu."""
    fbar = (h.h_tau_values - h.class_values) / h.mesh.class_lambda
    return covolume(h, quad_order=quad_order) - float((fbar * mu.mass).sum())


def sandwich_check(h0: EquivariantSupport, h1: EquivariantSupport,
                   quad_order: int = 8) -> dict:
    """First-variation sandwich for nested h1 <= h0:

    int (h0-h1) dA(h0)  <=  covol(h1)-covol(h0)  <=  int (h0-h1) dA(h1)."""
    m = h0.mesh
    f = (h0.class_values - h1.class_values) / m.class_lambda
    if f.min() < -1e-9:
        raise ValueError("sandwich check needs h1 <= h0")
    a0 = m.class_masses(h0.class_values)
    a1 = m.class_masses(h1.class_values)
    lower = float((f * m.class_lambda * a0).sum())
    upper = float((f * m.class_lambda * a1).sum())
    dc = covolume(h1, quad_order) - covolume(h0, quad_order)
    return {"lower": lower, "diff": dc, "upper": upper,
            "holds": bool(lower <= dc + 1e-6 * (1 + abs(dc))
                          and dc <= upper + 1e-6 * (1 + abs(dc)))}
