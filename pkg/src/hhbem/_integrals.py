"""Closed-form integrals of the Newton kernel over flat triangles.

All routines take a point ``x`` and the corners ``a, b, c`` of a triangle
(counter-clockwise about its unit normal ``n``). Nothing here is divided
by the 4*pi normalisation.

References: Wilton et al., IEEE TAP 32 (1984) for the 1/R integral;
van Oosterom & Strackee, IEEE TBME 30 (1983) for the solid angle.
"""

import math

import numpy as np
from numba import njit

# relative in-plane tolerance; below it a point counts as lying in the
# triangle plane (principal value: zero solid angle)
PLANE_TOL = 1e-12


@njit(cache=True)
def _dot(u, v):
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


@njit(cache=True)
def _log_ratio(rp, lp, rm, lm):
    # ln((R+ + l+)/(R- + l-)); the mirrored form avoids cancellation
    # when the point lies beyond the edge's far end
    if lp + lm > 0.0:
        return math.log((rp + lp) / (rm + lm))
    return math.log((rm - lm) / (rp - lp))


@njit(cache=True)
def _edge_terms(x, p, q, n, out):
    """out <- [P0, l+, l-, R+, R-, m0, m1, m2]; returns the edge length."""
    d0 = q[0] - p[0]
    d1 = q[1] - p[1]
    d2 = q[2] - p[2]
    ln = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    s0, s1, s2 = d0 / ln, d1 / ln, d2 / ln
    # outward in-plane edge normal m = s x n
    m0 = s1 * n[2] - s2 * n[1]
    m1 = s2 * n[0] - s0 * n[2]
    m2 = s0 * n[1] - s1 * n[0]
    pa0, pa1, pa2 = p[0] - x[0], p[1] - x[1], p[2] - x[2]
    pb0, pb1, pb2 = q[0] - x[0], q[1] - x[1], q[2] - x[2]
    p0 = pa0 * m0 + pa1 * m1 + pa2 * m2
    lm = pa0 * s0 + pa1 * s1 + pa2 * s2
    lp = pb0 * s0 + pb1 * s1 + pb2 * s2
    rm = math.sqrt(pa0 * pa0 + pa1 * pa1 + pa2 * pa2)
    rp = math.sqrt(pb0 * pb0 + pb1 * pb1 + pb2 * pb2)
    out[0] = p0
    out[1] = lp
    out[2] = lm
    out[3] = rp
    out[4] = rm
    out[5] = m0
    out[6] = m1
    out[7] = m2
    return ln


@njit(cache=True)
def newton_integral(x, a, b, c, n):
    """Integral of 1/|x - q| over the triangle; finite for every x."""
    w = (x[0] - a[0]) * n[0] + (x[1] - a[1]) * n[1] + (x[2] - a[2]) * n[2]
    aw = abs(w)
    buf = np.empty(8)
    total = 0.0
    corners = (a, b, c)
    for e in range(3):
        p = corners[e]
        q = corners[(e + 1) % 3]
        ln = _edge_terms(x, p, q, n, buf)
        p0, lp, lm, rp, rm = buf[0], buf[1], buf[2], buf[3], buf[4]
        if abs(p0) <= 1e-14 * ln:
            continue
        total += p0 * _log_ratio(rp, lp, rm, lm)
        if aw > 0.0:
            r0sq = p0 * p0 + w * w
            total -= aw * (
                math.atan(p0 * lp / (r0sq + aw * rp)) - math.atan(p0 * lm / (r0sq + aw * rm))
            )
    return total


@njit(cache=True)
def solid_angle(x, a, b, c):
    """Signed solid angle of the triangle seen from ``x``.

    Positive when ``x`` lies on the side opposite to the normal. Points in
    the triangle plane get 0 (principal value).
    """
    r0 = np.empty(3)
    r1 = np.empty(3)
    r2 = np.empty(3)
    for k in range(3):
        r0[k] = a[k] - x[k]
        r1[k] = b[k] - x[k]
        r2[k] = c[k] - x[k]
    l0 = math.sqrt(_dot(r0, r0))
    l1 = math.sqrt(_dot(r1, r1))
    l2 = math.sqrt(_dot(r2, r2))
    det = (
        r0[0] * (r1[1] * r2[2] - r1[2] * r2[1])
        - r0[1] * (r1[0] * r2[2] - r1[2] * r2[0])
        + r0[2] * (r1[0] * r2[1] - r1[1] * r2[0])
    )
    # det = 2 * area * height; compare the height with the triangle size
    e0 = math.sqrt((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 + (b[2] - a[2]) ** 2)
    e1 = math.sqrt((c[0] - a[0]) ** 2 + (c[1] - a[1]) ** 2 + (c[2] - a[2]) ** 2)
    cr0 = (b[1] - a[1]) * (c[2] - a[2]) - (b[2] - a[2]) * (c[1] - a[1])
    cr1 = (b[2] - a[2]) * (c[0] - a[0]) - (b[0] - a[0]) * (c[2] - a[2])
    cr2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    twice_area = math.sqrt(cr0 * cr0 + cr1 * cr1 + cr2 * cr2)
    if abs(det) <= PLANE_TOL * twice_area * max(e0, e1):
        return 0.0
    denom = l0 * l1 * l2 + _dot(r0, r1) * l2 + _dot(r0, r2) * l1 + _dot(r1, r2) * l0
    return 2.0 * math.atan2(det, denom)


@njit(cache=True)
def gradient_integral(x, a, b, c, n, out):
    """out <- integral of (x - q)/|x - q|^3 over the triangle.

    In the triangle's own plane the in-plane part is the principal value.
    Diverges (log) when ``x`` sits on an edge.
    """
    buf = np.empty(8)
    g0 = 0.0
    g1 = 0.0
    g2 = 0.0
    corners = (a, b, c)
    for e in range(3):
        p = corners[e]
        q = corners[(e + 1) % 3]
        _edge_terms(x, p, q, n, buf)
        gam = _log_ratio(buf[3], buf[1], buf[4], buf[2])
        g0 += buf[5] * gam
        g1 += buf[6] * gam
        g2 += buf[7] * gam
    om = solid_angle(x, a, b, c)
    out[0] = g0 - om * n[0]
    out[1] = g1 - om * n[1]
    out[2] = g2 - om * n[2]


@njit(cache=True)
def point_matrices(points, corners, normals, want_phi, want_omega, want_grad):
    """Dense per-(point, triangle) integrals for a batch of points."""
    p = points.shape[0]
    m = corners.shape[0]
    phi = np.zeros((p if want_phi else 0, m))
    om = np.zeros((p if want_omega else 0, m))
    grad = np.zeros((p if want_grad else 0, m, 3))
    g = np.empty(3)
    for i in range(p):
        x = points[i]
        for j in range(m):
            a = corners[j, 0]
            b = corners[j, 1]
            c = corners[j, 2]
            if want_phi:
                phi[i, j] = newton_integral(x, a, b, c, normals[j])
            if want_omega:
                om[i, j] = solid_angle(x, a, b, c)
            if want_grad:
                gradient_integral(x, a, b, c, normals[j], g)
                grad[i, j, 0] = g[0]
                grad[i, j, 1] = g[1]
                grad[i, j, 2] = g[2]
    return phi, om, grad


@njit(cache=True)
def collocation_rows(centroids, corners, normals, row0, row1, S, K):
    """Fill rows ``row0:row1`` of the collocation matrices (unnormalised).

    S[i, j] = newton integral, K[i, j] = solid angle (diagonal left 0).
    """
    m = corners.shape[0]
    for i in range(row0, row1):
        x = centroids[i]
        for j in range(m):
            a = corners[j, 0]
            b = corners[j, 1]
            c = corners[j, 2]
            S[i, j] = newton_integral(x, a, b, c, normals[j])
            if j != i:
                K[i, j] = solid_angle(x, a, b, c)


@njit(cache=True)
def _rule_sum(x, a, b, c, area, bary, bw):
    # plain triangle quadrature of 1/|x - q|, for far points only
    acc = 0.0
    for k in range(bw.shape[0]):
        d0 = bary[k, 0] * a[0] + bary[k, 1] * b[0] + bary[k, 2] * c[0] - x[0]
        d1 = bary[k, 0] * a[1] + bary[k, 1] * b[1] + bary[k, 2] * c[1] - x[1]
        d2 = bary[k, 0] * a[2] + bary[k, 1] * b[2] + bary[k, 2] * c[2] - x[2]
        acc += bw[k] / math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    return acc * area


@njit(cache=True)
def edge_means(starts, ends, corners, normals, areas, centroids, radii, rules, out):
    """out[e, j] <- mean over edge ``e`` of the newton integral of triangle ``j``.

    ``rules`` is a tuple ``(near_nodes, near_weights, n_near, mid_nodes,
    mid_weights, far_nodes, far_weights, bary, bary_weights, mid_ratio,
    far_ratio)``: Gauss-Legendre rules on [-1, 1] for three distance bands
    measured in units of ``edge length + triangle radius``. Near and mid
    bands use the analytic triangle integral at every edge node (the near
    band on ``n_near`` sub-intervals); the far band uses the triangle rule
    ``bary``.
    """
    near_x, near_w, n_near, mid_x, mid_w, far_x, far_w, bary, bw, mid_ratio, far_ratio = rules
    n_edges = starts.shape[0]
    m = corners.shape[0]
    x = np.empty(3)
    for e in range(n_edges):
        a = starts[e]
        b = ends[e]
        ln = math.sqrt((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 + (b[2] - a[2]) ** 2)
        mid0 = 0.5 * (a[0] + b[0])
        mid1 = 0.5 * (a[1] + b[1])
        mid2 = 0.5 * (a[2] + b[2])
        for j in range(m):
            c = centroids[j]
            d = math.sqrt((mid0 - c[0]) ** 2 + (mid1 - c[1]) ** 2 + (mid2 - c[2]) ** 2)
            size = ln + radii[j]
            ta = corners[j, 0]
            tb = corners[j, 1]
            tc = corners[j, 2]
            acc = 0.0
            if d >= far_ratio * size:
                for k in range(far_x.shape[0]):
                    t = 0.5 * (far_x[k] + 1.0)
                    for q in range(3):
                        x[q] = a[q] + t * (b[q] - a[q])
                    acc += 0.5 * far_w[k] * _rule_sum(x, ta, tb, tc, areas[j], bary, bw)
            else:
                nsub = n_near if d < mid_ratio * size else 1
                nodes = near_x if nsub > 1 else mid_x
                weights = near_w if nsub > 1 else mid_w
                half = 0.5 / nsub
                for s in range(nsub):
                    t0 = s / nsub
                    for k in range(nodes.shape[0]):
                        t = t0 + half * (nodes[k] + 1.0)
                        for q in range(3):
                            x[q] = a[q] + t * (b[q] - a[q])
                        acc += weights[k] * half * newton_integral(x, ta, tb, tc, normals[j])
            out[e, j] = acc


@njit(cache=True)
def point_triangle_distance(x, a, b, c):
    """Euclidean distance from ``x`` to the closed triangle (Ericson's region test)."""
    ab = b - a
    ac = c - a
    ap = x - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return math.sqrt(_dot(ap, ap))
    bp = x - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    if d3 >= 0.0 and d4 <= d3:
        return math.sqrt(_dot(bp, bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        y = a + (d1 / (d1 - d3)) * ab
        return math.sqrt(_dot(x - y, x - y))
    cp = x - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    if d6 >= 0.0 and d5 <= d6:
        return math.sqrt(_dot(cp, cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        y = a + (d2 / (d2 - d6)) * ac
        return math.sqrt(_dot(x - y, x - y))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        y = b + w * (c - b)
        return math.sqrt(_dot(x - y, x - y))
    denom = 1.0 / (va + vb + vc)
    y = a + ab * (vb * denom) + ac * (vc * denom)
    return math.sqrt(_dot(x - y, x - y))


@njit(cache=True)
def nearest_distances(points, corners):
    out = np.empty(points.shape[0])
    for i in range(points.shape[0]):
        best = np.inf
        for j in range(corners.shape[0]):
            d = point_triangle_distance(points[i], corners[j, 0], corners[j, 1], corners[j, 2])
            if d < best:
                best = d
        out[i] = best
    return out
