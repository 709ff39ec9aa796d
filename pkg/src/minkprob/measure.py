"""Discrete Monge-Ampere and area measures of PL convex functions (d=2).

The MA mass of an interior node is the Lebesgue area of its subdifferential
polygon: the convex polygon spanned by the gradients of the lower-hull
facets incident to the lifted node.  Boundary-ring nodes carry no mass
(their subdifferentials are truncated).  The Lorentzian area measure is
A = lambda MA; the Euclidean variant uses lambda^e = sqrt(1 + |x|^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import kernels
from .convexfn import GraphFunctionU, PLFunctionB, affine_fit
from .grid import BallGrid

HULL_FLAT_TOL = 1e-12
GRAD_DEDUP_TOL = 1e-9


@dataclass
class DiscreteMeasureB:
    """Nonnegative node masses on a ball grid."""

    grid: BallGrid
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.grid.n_nodes,):
            raise ValueError("one mass per node required")
        if self.mass.min() < -1e-12:
            raise ValueError("masses must be nonnegative")
        self.mass = np.clip(self.mass, 0.0, None)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def restricted_total(self, nodes) -> float:
        return float(self.mass[np.asarray(nodes, dtype=int)].sum())

    def scaled(self, c: float) -> "DiscreteMeasureB":
        return DiscreteMeasureB(self.grid, c * self.mass)


@dataclass
class SubdifferentialCell:
    """Ordered facet-gradient polygon of one node."""

    node: int
    polygon: np.ndarray = field(repr=False)

    @property
    def area(self) -> float:
        g = self.polygon
        if len(g) < 3:
            return 0.0
        x, y = g[:, 0], g[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _lower_hull_facets(points: np.ndarray, values: np.ndarray):
    """Lower-hull facet gradients plus the facet->node incidence (CSR)."""
    coef = affine_fit(points, values)
    resid = values - (points @ coef[:2] + coef[2])
    n = len(points)
    if np.abs(resid).max() < HULL_FLAT_TOL:
        return np.zeros((0, 2)), np.zeros(n + 1, dtype=np.int64), \
            np.zeros(0, dtype=np.int64), coef, np.zeros((0, 3), dtype=np.int64)
    lifted = np.column_stack([points, resid])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        hull = ConvexHull(lifted, qhull_options="QJ")
    eq = hull.equations
    lower = eq[:, 2] < -HULL_FLAT_TOL
    simp = hull.simplices[lower]
    grads = -eq[lower, :2] / eq[lower, 2:3]
    counts = np.zeros(n + 1, dtype=np.int64)
    for v in range(3):
        np.add.at(counts, simp[:, v] + 1, 1)
    fptr = np.cumsum(counts).astype(np.int64)
    fidx = np.zeros(fptr[-1], dtype=np.int64)
    cursor = fptr[:-1].copy()
    for fi in range(len(simp)):
        for v in simp[fi]:
            fidx[cursor[v]] = fi
            cursor[v] += 1
    return grads, fptr, fidx, coef, simp


def lower_hull_edges(points: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Unique node-index edges of the lower-hull triangulation."""
    _, _, _, _, simp = _lower_hull_facets(points, values)
    if len(simp) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.vstack([simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [0, 2]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def ma_measure(h: PLFunctionB, cells: bool = False):
    """Monge-Ampere measure of a convex PL function.

    Interior node mass = area of the polygon of incident lower-hull facet
    gradients; nodes absorbed into facets get zero; boundary-ring nodes get
    zero by convention.  With ``cells=True`` also returns the
    SubdifferentialCell list for interior nodes on the hull.
    """
    if h.convex_flag == "failed":
        raise ValueError("non-convex input: convexify first")
    if h.convex_flag == "unknown":
        if not h.copy().check_convex(tol=1e-7):
            raise ValueError("non-convex input: convexify first")
    grid = h.grid
    grads, fptr, fidx, coef, _ = _lower_hull_facets(grid.nodes, h.values)
    masses = kernels.facet_polygon_areas(grads, fptr, fidx, GRAD_DEDUP_TOL) \
        if len(grads) else np.zeros(grid.n_nodes)
    masses = np.asarray(masses)
    masses[grid.boundary_ring] = 0.0
    out = DiscreteMeasureB(grid, masses)
    if not cells:
        return out
    cell_list = []
    for i in grid.interior:
        fs = fidx[fptr[i]:fptr[i + 1]]
        if len(fs) < 3:
            continue
        g = grads[fs] + coef[:2]
        g = _dedup_sorted(g)
        if len(g) >= 3:
            c = g.mean(axis=0)
            ang = np.arctan2(g[:, 1] - c[1], g[:, 0] - c[0])
            cell_list.append(SubdifferentialCell(int(i), g[np.argsort(ang)]))
    return out, cell_list


def _dedup_sorted(g):
    order = np.lexsort((g[:, 1], g[:, 0]))
    g = g[order]
    keep = np.ones(len(g), dtype=bool)
    for t in range(1, len(g)):
        if (abs(g[t, 0] - g[t - 1, 0]) < GRAD_DEDUP_TOL
                and abs(g[t, 1] - g[t - 1, 1]) < GRAD_DEDUP_TOL):
            keep[t] = False
    return g[keep]


def area_measure(h: PLFunctionB, euclidean: bool = False) -> DiscreteMeasureB:
    """Area measure A = lambda MA (Lorentzian) or A^e = lambda^e MA."""
    ma = ma_measure(h)
    r2 = (h.grid.nodes ** 2).sum(axis=1)
    lam = np.sqrt(1.0 + r2) if euclidean else np.sqrt(np.clip(1.0 - r2, 0.0, None))
    return DiscreteMeasureB(h.grid, lam * ma.mass)


def area_from_graph(u: GraphFunctionU, omega_nodes, grid: BallGrid,
                    warn=None) -> float:
    """Graph-side oracle: integral of sqrt(1 - |grad u~|^2) over the cells of
    the graph grid whose gradient's nearest grid node lies in ``omega_nodes``.

    Independent of the hull pipeline; cells with gradient norm >= 1 are
    excluded (a measure-zero set in the continuum).
    """
    from scipy.spatial import cKDTree

    omega = np.zeros(grid.n_nodes, dtype=bool)
    omega[np.asarray(omega_nodes, dtype=int)] = True
    g = u.cell_gradients().reshape(-1, 2)
    norm2 = (g ** 2).sum(axis=1)
    bad = norm2 >= 1.0
    if bad.any() and warn is not None:
        warn(f"{int(bad.sum())} graph cells with |grad| >= 1 excluded")
    tree = cKDTree(grid.nodes)
    _, nearest = tree.query(g[~bad])
    inside = omega[nearest]
    w = np.sqrt(1.0 - norm2[~bad][inside])
    return float(w.sum() * u.dx * u.dx)


def hessian_det_density(h, x, step: float = 1e-4) -> float:
    """det Hess h(x) by central finite differences (any dimension)."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    H = np.zeros((d, d))
    f0 = float(h(x))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        H[i, i] = (float(h(x + ei)) - 2.0 * f0 + float(h(x - ei))) / step ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            H[i, j] = H[j, i] = (
                float(h(x + ei + ej)) - float(h(x + ei - ej))
                - float(h(x - ei + ej)) + float(h(x - ei - ej))
            ) / (4.0 * step ** 2)
    return float(np.linalg.det(H))


def mean_radius(h, x, step: float = 1e-4) -> float:
    """Mean radius of curvature (lambda/d)(tr Hess h - Hess h(x,x))."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    H = np.zeros((d, d))
    f0 = float(h(x))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        H[i, i] = (float(h(x + ei)) - 2.0 * f0 + float(h(x - ei))) / step ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            H[i, j] = H[j, i] = (
                float(h(x + ei + ej)) - float(h(x + ei - ej))
                - float(h(x - ei + ej)) + float(h(x - ei - ej))
            ) / (4.0 * step ** 2)
    lam = np.sqrt(1.0 - float(np.dot(x, x)))
    return float(lam / d * (np.trace(H) - x @ H @ x))


def ma_law_checks(h: PLFunctionB, c: float = 2.0, affine=(0.3, -0.2, 0.05),
                  n_regions: int = 50, seed: int = 0, tol: float = 1e-9):
    """Verify the exact transformation laws of the discrete MA measure.

    MA(c h) = c^d MA(h) and MA(h + affine) = MA(h) nodewise within tol;
    MA(max(h1,h2)) >= min(MA(h1), MA(h2)) on random node subsets.
    Returns a report dict listing any violations.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    grid = h.grid
    base = ma_measure(h).mass
    scaled = ma_measure(PLFunctionB(grid, c * h.values, h.convex_flag)).mass
    err_scale = float(np.abs(scaled - c ** 2 * base).max())
    aff = grid.nodes @ np.asarray(affine[:2]) + affine[2]
    shifted = ma_measure(PLFunctionB(grid, h.values + aff, h.convex_flag)).mass
    err_affine = float(np.abs(shifted - base).max())

    rng = np.random.default_rng(seed)
    q = rng.normal(size=2) * 0.1
    h2 = PLFunctionB(grid, h.values + grid.nodes @ q + 0.05, "unknown")
    hmax = PLFunctionB(grid, np.maximum(h.values, h2.values), "unknown")
    m1, m2 = base, ma_measure(h2).mass
    mm = ma_measure(hmax).mass
    violations = []
    interior = grid.interior
    for _ in range(n_regions):
        size = rng.integers(1, max(2, len(interior) // 4))
        omega = rng.choice(interior, size=size, replace=False)
        lhs = mm[omega].sum()
        rhs = min(m1[omega].sum(), m2[omega].sum())
        if lhs < rhs - 1e-9:
            violations.append({"region_size": int(size),
                               "lhs": float(lhs), "rhs": float(rhs)})
    return {
        "scaling_error": err_scale,
        "affine_error": err_affine,
        "scaling_ok": err_scale <= tol,
        "affine_ok": err_affine <= tol,
        "max_law_violations": violations,
        "max_law_ok": not violations,
    }
