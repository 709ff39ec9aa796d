# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: subdifferential cell clipping, cell areas with
Jacobian edge weights, monotone bisection sweeps, and per-node polygon
areas from hull facet gradients.

The pure-python fallback in ``_kernels_py`` implements the same API.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, atan2

cnp.import_array()

BACKEND = "compiled"

DEF MAXV = 160


cdef struct Poly:
    double px[MAXV]
    double py[MAXV]
    int    eid[MAXV]      # constraint index owning the edge that starts at vertex k
    int    n


cdef void poly_init_box(Poly* P, double M) nogil:
    P.px[0] = -M; P.py[0] = -M
    P.px[1] =  M; P.py[1] = -M
    P.px[2] =  M; P.py[2] =  M
    P.px[3] = -M; P.py[3] =  M
    P.eid[0] = -1; P.eid[1] = -2; P.eid[2] = -3; P.eid[3] = -4
    P.n = 4


cdef int poly_clip(Poly* P, double nx, double ny, double off, int cid) nogil:
    """Clip polygon by half-plane nx*x + ny*y <= off; returns new vertex count
    (0 when empty, -1 on vertex-buffer overflow)."""
    cdef double vals[MAXV]
    cdef double qx[MAXV]
    cdef double qy[MAXV]
    cdef int qe[MAXV]
    cdef int i, j, m
    cdef double va, vb, t, mx
    cdef int n = P.n
    if n == 0:
        return 0
    mx = -1e300
    for i in range(n):
        vals[i] = P.px[i] * nx + P.py[i] * ny - off
        if vals[i] > mx:
            mx = vals[i]
    if mx <= 0.0:
        return n        # no cut
    m = 0
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        va = vals[i]
        vb = vals[j]
        if va <= 0.0:
            if m >= MAXV - 1:
                return -1
            qx[m] = P.px[i]; qy[m] = P.py[i]; qe[m] = P.eid[i]
            m += 1
            if vb > 0.0:
                if m >= MAXV - 1:
                    return -1
                t = va / (va - vb)
                qx[m] = P.px[i] + t * (P.px[j] - P.px[i])
                qy[m] = P.py[i] + t * (P.py[j] - P.py[i])
                qe[m] = cid
                m += 1
        elif vb <= 0.0:
            if m >= MAXV - 1:
                return -1
            t = va / (va - vb)
            qx[m] = P.px[i] + t * (P.px[j] - P.px[i])
            qy[m] = P.py[i] + t * (P.py[j] - P.py[i])
            qe[m] = P.eid[i]
            m += 1
    for i in range(m):
        P.px[i] = qx[i]; P.py[i] = qy[i]; P.eid[i] = qe[i]
    P.n = m
    return m


cdef double poly_area(Poly* P) nogil:
    cdef double s = 0.0
    cdef int i, j
    if P.n < 3:
        return 0.0
    for i in range(P.n):
        j = i + 1
        if j == P.n:
            j = 0
        s += P.px[i] * P.py[j] - P.px[j] * P.py[i]
    return 0.5 * fabs(s)


cdef int poly_unbounded(Poly* P) nogil:
    cdef int k
    for k in range(P.n):
        if P.eid[k] < 0:
            return 1
    return 0


cdef double build_cell(Poly* P, double[:, ::1] pts, double[::1] h, long node,
                       long[::1] cand, double[::1] cpl, double delta,
                       double box) nogil:
    """Cell of `node` lowered by delta; tied candidates follow via cpl factors.

    Returns the area (0 for empty or overflowed polygons).
    """
    cdef int k, rc
    cdef long r
    cdef double dx, dy, off
    poly_init_box(P, box)
    for k in range(cand.shape[0]):
        r = cand[k]
        dx = pts[r, 0] - pts[node, 0]
        dy = pts[r, 1] - pts[node, 1]
        off = (h[r] - cpl[k] * delta) - (h[node] - delta)
        rc = poly_clip(P, dx, dy, off, k)
        if rc == 0:
            return 0.0
        if rc < 0:
            P.n = 0
            return 0.0
    return poly_area(P)


def cell_area(double[:, ::1] pts, double[::1] h, long node,
              long[::1] cand, double[::1] cpl, double delta=0.0,
              double box=64.0):
    """Single cell area with the node lowered by delta; returns (area, unbounded)."""
    cdef Poly P
    cdef double a = build_cell(&P, pts, h, node, cand, cpl, delta, box)
    return a, bool(poly_unbounded(&P))


def cell_areas(double[:, ::1] pts, double[::1] h, long[::1] nodes,
               long[::1] indptr, long[::1] indices, double box=64.0):
    """Cell areas for the listed nodes; candidate lists in CSR slot order."""
    cdef Py_ssize_t m = nodes.shape[0]
    out = np.zeros(m)
    ubout = np.zeros(m, dtype=np.int64)
    zeros = np.zeros(indices.shape[0])
    cdef double[::1] o = out
    cdef long[::1] u = ubout
    cdef double[::1] z = zeros
    cdef Poly P
    cdef Py_ssize_t i
    for i in range(m):
        o[i] = build_cell(&P, pts, h, nodes[i],
                          indices[indptr[i]:indptr[i + 1]],
                          z[indptr[i]:indptr[i + 1]], 0.0, box)
        u[i] = poly_unbounded(&P)
    return out, ubout.astype(bool)


def cell_areas_jacobian(double[:, ::1] pts, double[::1] h, long[::1] nodes,
                        long[::1] indptr, long[::1] indices, double box=64.0):
    """Cell areas plus Jacobian weights w_ik = len(edge through candidate k)/dist.

    Returns (areas, unbounded, jptr, jslots, jvals): for slot i the weights
    jvals[jptr[i]:jptr[i+1]] belong to candidate positions
    jslots[jptr[i]:jptr[i+1]] within that node's candidate list.
    """
    cdef Py_ssize_t m = nodes.shape[0]
    areas = np.zeros(m)
    ubout = np.zeros(m, dtype=np.int64)
    jptr = np.zeros(m + 1, dtype=np.int64)
    cap = max(16 * m, 64)
    jslots = np.zeros(cap, dtype=np.int64)
    jvals = np.zeros(cap)
    cdef double[::1] av = areas
    cdef long[::1] uv = ubout
    cdef long[::1] jp = jptr
    cdef long[::1] js = jslots
    cdef double[::1] jv = jvals
    zeros = np.zeros(indices.shape[0])
    cdef double[::1] z = zeros
    cdef Poly P
    cdef Py_ssize_t i
    cdef int k, j2, e, t2, ne, found
    cdef long node, r, pos
    cdef double dx, dy, elen, dist
    cdef long[::1] cand
    cdef double ex[MAXV]
    cdef long  ei[MAXV]
    for i in range(m):
        node = nodes[i]
        cand = indices[indptr[i]:indptr[i + 1]]
        av[i] = build_cell(&P, pts, h, node, cand,
                           z[indptr[i]:indptr[i + 1]], 0.0, box)
        uv[i] = poly_unbounded(&P)
        ne = 0
        for k in range(P.n):
            e = P.eid[k]
            if e < 0:
                continue
            j2 = k + 1
            if j2 == P.n:
                j2 = 0
            dx = P.px[j2] - P.px[k]
            dy = P.py[j2] - P.py[k]
            elen = sqrt(dx * dx + dy * dy)
            if elen <= 0.0:
                continue
            found = -1
            for t2 in range(ne):
                if ei[t2] == e:
                    found = t2
                    break
            if found >= 0:
                ex[found] += elen
            else:
                ei[ne] = e
                ex[ne] = elen
                ne += 1
        pos = jp[i]
        if pos + ne > cap:
            cap = 2 * cap + ne
            jslots = np.resize(jslots, cap)
            jvals = np.resize(jvals, cap)
            js = jslots
            jv = jvals
        for t2 in range(ne):
            r = cand[ei[t2]]
            dx = pts[r, 0] - pts[node, 0]
            dy = pts[r, 1] - pts[node, 1]
            dist = sqrt(dx * dx + dy * dy)
            js[pos + t2] = ei[t2]
            jv[pos + t2] = ex[t2] / dist
        jp[i + 1] = pos + ne
    total = int(jptr[m])
    return areas, ubout.astype(bool), jptr, jslots[:total].copy(), jvals[:total].copy()


def monotone_sweep(double[:, ::1] pts, double[::1] h, double[::1] targets,
                   long[::1] order, long[::1] indptr, long[::1] indices,
                   double[::1] couple, double bis_tol=1e-10, double box=64.0,
                   double max_drop=1e3):
    """One Oliker-Prussner sweep over `order` (slot-aligned with indptr and
    targets): lower each node until its cell area reaches its target.

    couple[k] = d h_cand[k] / d h_node for candidates tied to the node by a
    group action (0 for free candidates).  Heights update in place; tied
    copies are the caller's responsibility after the sweep.  Returns
    (moved, max_pre_deficit); moved = -1 signals a runaway node.
    """
    cdef Py_ssize_t m = order.shape[0]
    cdef Py_ssize_t i
    cdef int it
    cdef long node
    cdef double target, a0, lo, hi, mid, amid
    cdef long[::1] cand
    cdef double[::1] cpl
    cdef int moved = 0
    cdef double max_deficit = 0.0
    cdef Poly P
    for i in range(m):
        node = order[i]
        cand = indices[indptr[i]:indptr[i + 1]]
        cpl = couple[indptr[i]:indptr[i + 1]]
        target = targets[i]
        a0 = build_cell(&P, pts, h, node, cand, cpl, 0.0, box)
        if a0 >= target:
            continue
        if (target - a0) / (1.0 + target) > max_deficit:
            max_deficit = (target - a0) / (1.0 + target)
        lo = 0.0
        hi = 1e-3
        while hi < max_drop:
            amid = build_cell(&P, pts, h, node, cand, cpl, hi, box)
            if amid >= target:
                break
            lo = hi
            hi *= 2.0
        if hi >= max_drop:
            return -1, max_deficit
        for it in range(200):
            if hi - lo <= bis_tol:
                break
            mid = 0.5 * (lo + hi)
            amid = build_cell(&P, pts, h, node, cand, cpl, mid, box)
            if amid >= target:
                hi = mid
            else:
                lo = mid
        h[node] -= hi
        moved += 1
    return moved, max_deficit


def facet_polygon_areas(double[:, ::1] grads, long[::1] fptr, long[::1] fidx,
                        double dedup_tol=1e-9):
    """Per-node areas of the convex polygon of incident facet gradients.

    Node slot i owns facets fidx[fptr[i]:fptr[i+1]].  Duplicate gradients
    within dedup_tol are merged; fewer than 3 distinct gradients give zero.
    """
    cdef Py_ssize_t m = fptr.shape[0] - 1
    out = np.zeros(m)
    cdef double[::1] o = out
    cdef double gx[MAXV]
    cdef double gy[MAXV]
    cdef double ang[MAXV]
    cdef Py_ssize_t i
    cdef int k, t, n, j, keep
    cdef long f
    cdef double cx, cy, s, tmpx, tmpy, tmpa
    for i in range(m):
        n = 0
        for k in range(fptr[i], fptr[i + 1]):
            if n >= MAXV:
                break
            f = fidx[k]
            gx[n] = grads[f, 0]
            gy[n] = grads[f, 1]
            n += 1
        if n < 3:
            continue
        t = 0
        for k in range(n):
            keep = 1
            for j in range(t):
                if fabs(gx[k] - gx[j]) < dedup_tol and fabs(gy[k] - gy[j]) < dedup_tol:
                    keep = 0
                    break
            if keep:
                gx[t] = gx[k]
                gy[t] = gy[k]
                t += 1
        n = t
        if n < 3:
            continue
        cx = 0.0; cy = 0.0
        for k in range(n):
            cx += gx[k]; cy += gy[k]
        cx /= n; cy /= n
        for k in range(n):
            ang[k] = atan2(gy[k] - cy, gx[k] - cx)
        for k in range(1, n):
            tmpx = gx[k]; tmpy = gy[k]; tmpa = ang[k]
            j = k - 1
            while j >= 0 and ang[j] > tmpa:
                gx[j + 1] = gx[j]; gy[j + 1] = gy[j]; ang[j + 1] = ang[j]
                j -= 1
            gx[j + 1] = tmpx; gy[j + 1] = tmpy; ang[j + 1] = tmpa
        s = 0.0
        for k in range(n):
            j = k + 1
            if j == n:
                j = 0
            s += gx[k] * gy[j] - gx[j] * gy[k]
        o[i] = 0.5 * fabs(s)
    return out
