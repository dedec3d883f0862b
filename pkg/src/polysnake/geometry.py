"""Polygon construction and triangulation.

Coordinate convention throughout the package: x = column, y = row, origin
at the top-left pixel center. A polygon is a (k, 2) float array of (x, y)
vertices, implicitly closed (vertex k-1 connects back to 0).
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

Face = Tuple[int, int, int]


def cross2(a, b) -> float:
    """z component of the 2D cross product."""
    return float(a[0] * b[1] - a[1] * b[0])


def init_circle(h: int, w: int, k: int, diameter: float) -> np.ndarray:
    """k vertices equally spaced counterclockwise on a centered circle.

    The circle is centered at ((w-1)/2, (h-1)/2) with the first vertex at
    angle 0 (positive x direction). Identical for every image of the same
    size: the initial contour does not depend on image content.
    """
    if k < 3:
        raise ValueError(f"init_circle: need k >= 3 vertices, got {k}")
    if diameter > min(h, w):
        raise ValueError(
            f"init_circle: diameter {diameter} exceeds image min side {min(h, w)}")
    if diameter <= 0:
        raise ValueError(f"init_circle: diameter must be positive, got {diameter}")
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    r = diameter / 2.0
    theta = 2.0 * np.pi * np.arange(k) / k
    return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)


def polygon_area(vertices: np.ndarray) -> float:
    """Absolute shoelace area of a simple polygon, in pixel^2 units."""
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _circumcircle(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Circumcenter and squared radius; None for (near-)collinear points."""
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    if d == 0.0:
        return None
    a2 = a[0] * a[0] + a[1] * a[1]
    b2 = b[0] * b[0] + b[1] * b[1]
    c2 = c[0] * c[0] + c[1] * c[1]
    ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d
    uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d
    r2 = (a[0] - ux) ** 2 + (a[1] - uy) ** 2
    return ux, uy, r2


def delaunay(points: Sequence[Sequence[float]]) -> List[Face]:
    """Delaunay triangulation via incremental Bowyer-Watson insertion.

    Returns faces as (i, j, k) index triplets into ``points``, each ordered
    counterclockwise. Cocircular ties (e.g. all vertices of a regular
    polygon) are broken deterministically: a point lying on a circumcircle,
    within a scale-relative tolerance, counts as outside it, so earlier
    triangles survive. Valid for any point set that is not all collinear.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"delaunay: expected (k, 2) points, got shape {pts.shape}")
    n = pts.shape[0]
    if n < 3:
        raise ValueError(f"delaunay: need at least 3 points, got {n}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("delaunay: non-finite point coordinates")

    span = float(np.ptp(pts, axis=0).max())
    if span == 0.0:
        raise ValueError("delaunay: all points coincide")
    off = pts - pts[0]
    ref = off[int(np.argmax(np.hypot(off[:, 0], off[:, 1])))]
    cross = off[:, 0] * ref[1] - off[:, 1] * ref[0]
    if np.all(np.abs(cross) <= 1e-12 * span * span):
        raise ValueError("delaunay: all points are collinear; no triangulation exists")

    # super-triangle comfortably containing every point
    cx, cy = pts.mean(axis=0)
    m = 20.0 * span
    sup = np.array([[cx - m, cy - m], [cx + m, cy - m], [cx, cy + m]])
    allp = np.vstack([pts, sup])
    s0, s1, s2 = n, n + 1, n + 2

    # circumcircles in extended precision: the in-circle decisions must be
    # sharper than the tolerance downstream consumers check the final
    # triangulation with, or near-cocircular sets accumulate violations
    allp_ld = allp.astype(np.longdouble)

    # face -> (ux, uy, r2) circumcircle cache
    tris: dict = {}

    def add_tri(i, j, k):
        cc = _circumcircle(allp_ld[i], allp_ld[j], allp_ld[k])
        if cc is None:
            return  # degenerate sliver: drop (its area is ~0)
        tris[(i, j, k)] = cc

    add_tri(s0, s1, s2)
    eps = np.longdouble(1e-13) * span * span

    for p in range(n):
        px, py = allp_ld[p]
        # strictly-inside test: on-circle (within eps) counts as outside
        bad = [t for t, (ux, uy, r2) in tris.items()
               if (px - ux) ** 2 + (py - uy) ** 2 < r2 - eps]
        edge_count: dict = {}
        for (i, j, k) in bad:
            for e in ((i, j), (j, k), (k, i)):
                key = (min(e), max(e))
                edge_count[key] = edge_count.get(key, 0) + 1
            del tris[(i, j, k)]
        boundary = [e for e, c in edge_count.items() if c == 1]
        for (i, j) in boundary:
            # orient so (i, j, p) is counterclockwise
            if cross2(allp[j] - allp[i], allp[p] - allp[i]) < 0:
                i, j = j, i
            add_tri(i, j, p)

    faces = [t for t in tris if s0 not in t and s1 not in t and s2 not in t]
    out: List[Face] = []
    for (i, j, k) in faces:
        if cross2(allp[j] - allp[i], allp[k] - allp[i]) < 0:
            i, j = j, i
        out.append((int(i), int(j), int(k)))
    out.sort()
    return out


def convex_hull_area(points: np.ndarray) -> float:
    """Area of the convex hull of a point set (monotone-chain hull)."""
    pts = np.asarray(points, dtype=np.float64)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(iterable):
        chain: list = []
        for p in iterable:
            while len(chain) >= 2 and cross2(chain[-1] - chain[-2], p - chain[-2]) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        return 0.0
    return polygon_area(hull)
