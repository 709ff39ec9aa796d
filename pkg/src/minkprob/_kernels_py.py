"""Pure numpy/python fallback for the compiled kernels in ``_kernels.pyx``.

Same API, same semantics, no build step required.  Expect roughly one to
two orders of magnitude slower sweeps; see benchmarks/compare_kernels.py.
"""
import numpy as np

BACKEND = "pure"


def _init_box(box):
    poly = [(-box, -box), (box, -box), (box, box), (-box, box)]
    eids = [-1, -2, -3, -4]
    return poly, eids


def _clip(poly, eids, nx, ny, off, cid):
    n = len(poly)
    if n == 0:
        return poly, eids
    vals = [poly[k][0] * nx + poly[k][1] * ny - off for k in range(n)]
    if max(vals) <= 0.0:
        return poly, eids
    q, qe = [], []
    for i in range(n):
        j = (i + 1) % n
        va, vb = vals[i], vals[j]
        a, b = poly[i], poly[j]
        if va <= 0.0:
            q.append(a)
            qe.append(eids[i])
            if vb > 0.0:
                t = va / (va - vb)
                q.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
                qe.append(cid)
        elif vb <= 0.0:
            t = va / (va - vb)
            q.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
            qe.append(eids[i])
    return q, qe


def _area(poly):
    if len(poly) < 3:
        return 0.0
    s = 0.0
    n = len(poly)
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        s += x1 * y2 - x2 * y1
    return 0.5 * abs(s)


def _build_cell(pts, h, node, cand, cpl, delta, box):
    poly, eids = _init_box(box)
    x0, y0 = pts[node]
    hival = h[node] - delta
    for k, r in enumerate(cand):
        dx = pts[r, 0] - x0
        dy = pts[r, 1] - y0
        off = (h[r] - cpl[k] * delta) - hival
        poly, eids = _clip(poly, eids, dx, dy, off, k)
        if not poly:
            return [], []
    return poly, eids


def cell_area(pts, h, node, cand, cpl, delta=0.0, box=64.0):
    poly, eids = _build_cell(pts, h, int(node), cand, cpl, delta, box)
    return _area(poly), any(e < 0 for e in eids)


def cell_areas(pts, h, nodes, indptr, indices, box=64.0):
    m = len(nodes)
    out = np.zeros(m)
    ub = np.zeros(m, dtype=bool)
    zeros = np.zeros(len(indices))
    for i in range(m):
        cand = indices[indptr[i]:indptr[i + 1]]
        poly, eids = _build_cell(pts, h, int(nodes[i]), cand,
                                 zeros, 0.0, box)
        out[i] = _area(poly)
        ub[i] = any(e < 0 for e in eids)
    return out, ub


def cell_areas_jacobian(pts, h, nodes, indptr, indices, box=64.0):
    m = len(nodes)
    areas = np.zeros(m)
    ub = np.zeros(m, dtype=bool)
    jptr = np.zeros(m + 1, dtype=np.int64)
    slots_all, vals_all = [], []
    zeros = np.zeros(len(indices))
    for i in range(m):
        node = int(nodes[i])
        cand = indices[indptr[i]:indptr[i + 1]]
        poly, eids = _build_cell(pts, h, node, cand, zeros, 0.0, box)
        areas[i] = _area(poly)
        ub[i] = any(e < 0 for e in eids)
        acc = {}
        n = len(poly)
        for k in range(n):
            e = eids[k]
            if e < 0:
                continue
            a, b = poly[k], poly[(k + 1) % n]
            elen = np.hypot(b[0] - a[0], b[1] - a[1])
            if elen > 0.0:
                acc[e] = acc.get(e, 0.0) + elen
        slots = np.fromiter(acc.keys(), dtype=np.int64, count=len(acc))
        vals = np.fromiter(acc.values(), dtype=float, count=len(acc))
        if len(slots):
            d = pts[indices[indptr[i] + slots]] - pts[node]
            vals = vals / np.hypot(d[:, 0], d[:, 1])
        slots_all.append(slots)
        vals_all.append(vals)
        jptr[i + 1] = jptr[i] + len(slots)
    jslots = np.concatenate(slots_all) if slots_all else np.zeros(0, dtype=np.int64)
    jvals = np.concatenate(vals_all) if vals_all else np.zeros(0)
    return areas, ub, jptr, jslots, jvals


def monotone_sweep(pts, h, targets, order, indptr, indices, couple,
                   bis_tol=1e-10, box=64.0, max_drop=1e3):
    moved = 0
    max_deficit = 0.0

    def area_at(i, node, delta):
        cand = indices[indptr[i]:indptr[i + 1]]
        cpl = couple[indptr[i]:indptr[i + 1]]
        poly, _ = _build_cell(pts, h, node, cand, cpl, delta, box)
        return _area(poly)

    for i in range(len(order)):
        node = int(order[i])
        target = targets[i]
        a0 = area_at(i, node, 0.0)
        if a0 >= target:
            continue
        max_deficit = max(max_deficit, (target - a0) / (1.0 + target))
        lo, hi = 0.0, 1e-3
        while hi < max_drop:
            if area_at(i, node, hi) >= target:
                break
            lo = hi
            hi *= 2.0
        if hi >= max_drop:
            return -1, max_deficit
        for _ in range(200):
            if hi - lo <= bis_tol:
                break
            mid = 0.5 * (lo + hi)
            if area_at(i, node, mid) >= target:
                hi = mid
            else:
                lo = mid
        h[node] -= hi
        moved += 1
    return moved, max_deficit


def facet_polygon_areas(grads, fptr, fidx, dedup_tol=1e-9):
    m = len(fptr) - 1
    out = np.zeros(m)
    for i in range(m):
        g = grads[fidx[fptr[i]:fptr[i + 1]]]
        if len(g) < 3:
            continue
        order = np.lexsort((g[:, 1], g[:, 0]))
        g = g[order]
        keep = np.ones(len(g), dtype=bool)
        for t in range(1, len(g)):
            if (abs(g[t, 0] - g[t - 1, 0]) < dedup_tol
                    and abs(g[t, 1] - g[t - 1, 1]) < dedup_tol):
                keep[t] = False
        g = g[keep]
        if len(g) < 3:
            continue
        c = g.mean(axis=0)
        ang = np.arctan2(g[:, 1] - c[1], g[:, 0] - c[0])
        g = g[np.argsort(ang)]
        x, y = g[:, 0], g[:, 1]
        out[i] = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return out
