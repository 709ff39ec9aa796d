"""Convex functions on the disk and their dualities.

A ball support function is stored as a piecewise-linear function on a
BallGrid (PLFunctionB).  This module provides the 1-homogeneous extension,
the Legendre--Fenchel transform and its inverse, convex envelopes of
boundary data, the greatest convex minorant (convexify), support functions
of point sets, and the inverse Gauss map chi.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .core import ball_lambda, hat, mink_inner
from .grid import BallGrid

HULL_FLAT_TOL = 1e-12
CONVEX_NODE_TOL = 1e-9


def affine_fit(points: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Least-squares affine fit a.x + c; returns (a_1, .., a_d, c)."""
    A = np.column_stack([points, np.ones(len(points))])
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    return coef


def lower_hull_planes(points: np.ndarray, values: np.ndarray):
    """Lower-hull facet planes of lifted points as (slopes, intercepts).

    The hull function is max_k(slopes[k] . x + intercepts[k]).  Degenerate
    (affine) data returns the single fitted plane.
    """
    coef = affine_fit(points, values)
    resid = values - (points @ coef[:-1] + coef[-1])
    if np.abs(resid).max() < HULL_FLAT_TOL:
        return coef[:-1][None, :], np.array([coef[-1]])
    lifted = np.column_stack([points, resid])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        hull = ConvexHull(lifted, qhull_options="QJ")
    eq = hull.equations
    lower = eq[:, -2] < -HULL_FLAT_TOL
    slopes = -eq[lower, :-2] / eq[lower, -2:-1]
    icepts = -eq[lower, -1] / eq[lower, -2]
    return slopes + coef[:-1], icepts + coef[-1]


def hull_values(points: np.ndarray, values: np.ndarray,
                eval_points: np.ndarray) -> np.ndarray:
    """Greatest convex minorant of (points, values) evaluated at eval_points."""
    slopes, icepts = lower_hull_planes(points, values)
    vals = eval_points @ slopes.T + icepts
    return vals.max(axis=1)


@dataclass
class PLFunctionB:
    """Piecewise-linear function on a BallGrid with a convexity flag.

    ``convex_flag`` is one of "unknown", "verified", "failed"; it is set by
    check_convex / convexify, never assumed.
    """

    grid: BallGrid
    values: np.ndarray
    convex_flag: str = "unknown"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError("one value per grid node required")

    def __call__(self, x) -> float:
        return self.grid.interpolate(self.values, x)

    def copy(self) -> "PLFunctionB":
        return PLFunctionB(self.grid, self.values.copy(), self.convex_flag)

    def check_convex(self, tol: float = CONVEX_NODE_TOL) -> bool:
        hv = hull_values(self.grid.nodes, self.values, self.grid.nodes)
        ok = bool(np.all(self.values <= hv + tol))
        self.convex_flag = "verified" if ok else "failed"
        return ok

    def boundary_trace(self) -> "BoundaryData":
        idx = self.grid.boundary_ring
        ang = np.arctan2(self.grid.nodes[idx, 1], self.grid.nodes[idx, 0])
        order = np.argsort(ang)
        return BoundaryData(ang[order], self.values[idx][order])


@dataclass
class BoundaryData:
    """Continuous samples of g on the boundary circle, linear in angle."""

    angles: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ang = np.mod(np.asarray(self.angles, dtype=float), 2.0 * np.pi)
        val = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(val)):
            raise ValueError("boundary values must be finite")
        order = np.argsort(ang)
        self.angles = ang[order]
        self.values = val[order]

    @classmethod
    def from_function(cls, fn, n: int = 512) -> "BoundaryData":
        ang = 2.0 * np.pi * np.arange(n) / n
        return cls(ang, np.array([fn(a) for a in ang]))

    @classmethod
    def constant(cls, c: float, n: int = 64) -> "BoundaryData":
        ang = 2.0 * np.pi * np.arange(n) / n
        return cls(ang, np.full(n, float(c)))

    def __call__(self, theta) -> float:
        th = np.mod(theta, 2.0 * np.pi)
        ang = np.concatenate([self.angles, [self.angles[0] + 2.0 * np.pi]])
        val = np.concatenate([self.values, [self.values[0]]])
        k = np.searchsorted(ang, th, side="right") - 1
        k = np.clip(k, 0, len(ang) - 2)
        t = (th - ang[k]) / (ang[k + 1] - ang[k])
        return float(val[k] + t * (val[k + 1] - val[k]))

    def sample_points(self):
        pts = np.column_stack([np.cos(self.angles), np.sin(self.angles)])
        return pts, self.values


def homog_extension(h, X) -> float:
    """1-homogeneous extension H((x, z)) = z h(x/z) for future time-like X."""
    X = np.asarray(X, dtype=float)
    z = X[-1]
    if z <= 0.0 or mink_inner(X, X) >= 0.0:
        raise ValueError("homog_extension requires a future time-like vector")
    return float(z) * float(h(X[:-1] / z))


def support_from_points(P: np.ndarray, x) -> float:
    """Support value max_p <(x,1), p> of the F-convex set spanned by P."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if len(P) == 0:
        raise ValueError("empty point set")
    xh = hat(x)
    return float(np.max(P[:, :-1] @ xh[:-1] - P[:, -1] * xh[-1]))


def support_values_on_grid(P: np.ndarray, grid: BallGrid) -> PLFunctionB:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    xh = np.column_stack([grid.nodes, np.ones(grid.n_nodes)])
    vals = (xh[:, :2] @ P[:, :2].T) - np.outer(xh[:, 2], P[:, 2])
    return PLFunctionB(grid, vals.max(axis=1), convex_flag="verified")


def convexify(h: PLFunctionB) -> PLFunctionB:
    """Greatest convex minorant: lower hull values at every node."""
    hv = hull_values(h.grid.nodes, h.values, h.grid.nodes)
    out = PLFunctionB(h.grid, np.minimum(h.values, hv), convex_flag="verified")
    return out


def convex_envelope_boundary(g: BoundaryData, grid: BallGrid) -> PLFunctionB:
    """Convex envelope of boundary data: sup of affine minorants of g.

    Computed as the lower convex hull of the lifted unit-circle samples,
    evaluated at the grid nodes.
    """
    pts, vals = g.sample_points()
    if len(pts) < 3:
        raise ValueError("need at least d+1 boundary samples")
    env = hull_values(pts, vals, grid.nodes)
    return PLFunctionB(grid, env, convex_flag="verified")


def envelope_evaluator(g: BoundaryData):
    """Evaluator of the convex envelope of g, usable on the whole closed ball."""
    pts, vals = g.sample_points()
    slopes, icepts = lower_hull_planes(pts, vals)

    def h_g(x):
        x = np.asarray(x, dtype=float)
        return float(np.max(slopes @ x + icepts))

    return h_g


@dataclass
class GraphFunctionU:
    """Rectangular-grid sample of the graph function u~ (1-Lipschitz convex)."""

    x0: np.ndarray
    dx: float
    shape: tuple
    values: np.ndarray = field(repr=False)

    def cell_gradients(self):
        """Per-cell average gradients, shape (nx-1, ny-1, 2)."""
        v = self.values
        gx = (v[1:, :-1] + v[1:, 1:] - v[:-1, :-1] - v[:-1, 1:]) / (2.0 * self.dx)
        gy = (v[:-1, 1:] + v[1:, 1:] - v[:-1, :-1] - v[1:, :-1]) / (2.0 * self.dx)
        return np.stack([gx, gy], axis=-1)

    def max_gradient_norm(self) -> float:
        g = self.cell_gradients()
        return float(np.sqrt((g ** 2).sum(axis=-1)).max())


def legendre(h: PLFunctionB, box_pad: float = 0.15, n: int = 129) -> GraphFunctionU:
    """Discrete Legendre--Fenchel transform u~(p) = max_i(<x_i, p> - h_i).

    The graph grid covers the gradient range of h plus padding.  Brute force
    over grid nodes (O(N M)), vectorized.
    """
    slopes, _ = lower_hull_planes(h.grid.nodes, h.values)
    lo = slopes.min(axis=0) - box_pad
    hi = slopes.max(axis=0) + box_pad
    span = float(max(hi - lo))
    ctr = 0.5 * (lo + hi)
    dx = span / (n - 1)
    xs = ctr[0] - span / 2 + dx * np.arange(n)
    ys = ctr[1] - span / 2 + dx * np.arange(n)
    P = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = np.empty(len(P))
    chunk = 65536
    X = h.grid.nodes
    for s in range(0, len(P), chunk):
        vals[s:s + chunk] = (P[s:s + chunk] @ X.T - h.values).max(axis=1)
    return GraphFunctionU(np.array([xs[0], ys[0]]), dx, (n, n),
                          vals.reshape(n, n))


def legendre_inverse(u: GraphFunctionU, grid: BallGrid) -> PLFunctionB:
    """Back-transform h(x) = max_p(<x, p> - u~(p)) onto a ball grid."""
    nx, ny = u.shape
    xs = u.x0[0] + u.dx * np.arange(nx)
    ys = u.x0[1] + u.dx * np.arange(ny)
    P = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    uv = u.values.reshape(-1)
    vals = np.empty(grid.n_nodes)
    chunk = 8192
    for s in range(0, grid.n_nodes, chunk):
        vals[s:s + chunk] = (grid.nodes[s:s + chunk] @ P.T - uv).max(axis=1)
    return PLFunctionB(grid, vals, convex_flag="verified")


def chi_map(h, x, grad=None, step: float = 1e-5) -> np.ndarray:
    """Inverse Gauss map: boundary point of K with support direction (x,1).

    chi(x) = (grad h(x), <x, grad h(x)> - h(x)); the gradient is taken
    analytically when supplied, otherwise by central differences.
    """
    x = np.asarray(x, dtype=float)
    if grad is not None:
        g = np.asarray(grad(x), dtype=float)
    else:
        g = np.zeros(len(x))
        for i in range(len(x)):
            e = np.zeros(len(x))
            e[i] = step
            g[i] = (h(x + e) - h(x - e)) / (2.0 * step)
    return np.concatenate([g, [float(np.dot(x, g)) - float(h(x))]])
