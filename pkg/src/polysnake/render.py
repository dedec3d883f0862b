"""Soft (differentiable) and hard triangle-mesh rasterization.

A polygon is drawn as the union of its triangulation's faces. Per face,
each pixel center gets a soft occupancy o = logistic(-sd / tau) from its
signed distance sd to the triangle (negative inside); the union is the
complement product 1 - prod_f (1 - o_f), which stays in [0, 1] however
faces overlap. As tau -> 0 the mask approaches hard pixel-center coverage.

Gradients to vertices are exact: the chain runs through the logistic, the
signed distance of the nearest edge (envelope rule: the clamped projection
parameter is held fixed), and the union product via leave-one-out
prefix/suffix products, so saturated faces never produce 0/0.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor, _record

_GRID_CACHE: dict = {}


def _pixel_grid(h: int, w: int) -> np.ndarray:
    grid = _GRID_CACHE.get((h, w))
    if grid is None:
        ys, xs = np.mgrid[0:h, 0:w]
        grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
        _GRID_CACHE[(h, w)] = grid
    return grid


def _sigmoid64(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _faces_geometry(v: np.ndarray, faces_arr: np.ndarray, pts: np.ndarray):
    """Signed distance pieces of a block of triangles for all pixel centers.

    Returns (sd, edge_id, t, dvec, d), each leading with a face axis: the
    nearest feature of edge ``edge_id`` is the point at clamped parameter
    ``t`` along it, and ``dvec = pixel - nearest`` with length ``d``.
    """
    E0 = v[faces_arr]                              # (F, 3, 2)
    u = v[faces_arr[:, (1, 2, 0)]] - E0            # (F, 3, 2)
    L2 = (u * u).sum(axis=-1)                      # (F, 3)
    rel = pts[None, None] - E0[:, :, None]         # (F, 3, P, 2)
    pu = (rel * u[:, :, None]).sum(axis=-1)        # (F, 3, P)
    t3 = np.clip(pu / np.where(L2 > 0, L2, 1.0)[:, :, None], 0.0, 1.0)
    t3 = np.where((L2 > 0)[:, :, None], t3, 0.0)
    dv3 = rel - t3[..., None] * u[:, :, None]
    d2 = (dv3 * dv3).sum(axis=-1)                  # (F, 3, P)
    edge_id = d2.argmin(axis=1)                    # (F, P)
    d = np.sqrt(np.take_along_axis(d2, edge_id[:, None], axis=1)[:, 0])
    t = np.take_along_axis(t3, edge_id[:, None], axis=1)[:, 0]

    s = u[:, :, 0, None] * rel[..., 1] - u[:, :, 1, None] * rel[..., 0]
    inside = (s >= 0).all(axis=1) | (s <= 0).all(axis=1)
    sd = np.where(inside, -d, d)

    rows = np.arange(len(faces_arr))[:, None]
    q = E0[rows, edge_id] + t[..., None] * u[rows, edge_id]
    dvec = pts[None] - q
    return sd, edge_id, t, dvec, d


def _face_blocks(n_faces: int, n_pixels: int):
    """Face index ranges keeping the (F, 3, P, 2) working set bounded."""
    block = max(1, 500_000 // max(n_pixels, 1))
    for lo in range(0, n_faces, block):
        yield lo, min(lo + block, n_faces)


def canonical_faces(faces: Sequence) -> List[Tuple[int, int, int]]:
    """Faces as sorted index triplets: the union product is evaluated in
    this order, which makes the mask invariant to input face permutation
    down to the last bit."""
    return sorted(tuple(int(i) for i in f) for f in faces)


def soft_rasterize_forward(vertices: np.ndarray, faces: Sequence, h: int, w: int,
                           tau: float, return_occupancy: bool = False):
    """Soft union mask as float64 (h, w); optionally also per-face occupancy."""
    v = np.asarray(vertices, dtype=np.float64)
    faces = canonical_faces(faces)
    pts = _pixel_grid(h, w)
    faces_arr = np.asarray(faces, dtype=np.intp).reshape(len(faces), 3)
    occ = np.empty((len(faces), h * w))
    for lo, hi in _face_blocks(len(faces), h * w):
        sd = _faces_geometry(v, faces_arr[lo:hi], pts)[0]
        occ[lo:hi] = _sigmoid64(-sd / tau)
    if len(faces) == 0:
        mask = np.zeros(h * w)
    else:
        mask = 1.0 - np.prod(1.0 - occ, axis=0)
    if return_occupancy:
        return mask.reshape(h, w), occ
    return mask.reshape(h, w)


def soft_rasterize_grad(vertices: np.ndarray, faces: Sequence, h: int, w: int,
                        tau: float, occ: np.ndarray,
                        grad_mask: np.ndarray, _geom: Optional[dict] = None
                        ) -> np.ndarray:
    """Exact vertex gradients for a recorded soft rasterization.

    ``occ`` must be the occupancy returned by ``soft_rasterize_forward``,
    whose rows follow ``canonical_faces`` order. ``_geom`` may carry
    per-block geometry cached by the forward pass to avoid recomputing it.
    """
    v = np.asarray(vertices, dtype=np.float64)
    faces = canonical_faces(faces)
    pts = _pixel_grid(h, w)
    g = np.asarray(grad_mask, dtype=np.float64).ravel()
    gv = np.zeros_like(v)
    nf = len(faces)
    if nf == 0:
        return gv
    faces_arr = np.asarray(faces, dtype=np.intp).reshape(nf, 3)

    r = 1.0 - occ  # (nf, hw)
    prefix = np.ones_like(r)
    suffix = np.ones_like(r)
    if nf > 1:
        prefix[1:] = np.cumprod(r[:-1], axis=0)
        suffix[:-1] = np.cumprod(r[:0:-1], axis=0)[::-1]

    for lo, hi in _face_blocks(nf, h * w):
        block = faces_arr[lo:hi]
        if _geom is not None and (lo, hi) in _geom:
            sd, edge_id, t, dvec, d = _geom[lo, hi]
        else:
            sd, edge_id, t, dvec, d = _faces_geometry(v, block, pts)
        o = occ[lo:hi]
        # d(mask)/d(o_f) = prod of (1 - o_g) over g != f
        go = g[None] * prefix[lo:hi] * suffix[lo:hi]
        # sd = sign * d and o = logistic(-sd/tau)
        gsd = go * (-o * (1.0 - o) / tau)
        dsafe = np.maximum(d, 1e-12)
        sign = np.where(sd < 0, -1.0, 1.0)
        gq = (gsd * sign)[..., None] * (-dvec / dsafe[..., None])  # (F, P, 2)
        rows = np.arange(len(block))[:, None]
        i0 = block[rows, edge_id]                   # start vertex of nearest edge
        i1 = block[:, (1, 2, 0)][rows, edge_id]     # end vertex
        np.add.at(gv, i0.ravel(), ((1.0 - t)[..., None] * gq).reshape(-1, 2))
        np.add.at(gv, i1.ravel(), (t[..., None] * gq).reshape(-1, 2))
    return gv


def rasterize(vertices: Tensor, faces: Sequence, h: int, w: int,
              tau: float = 1.0) -> Tensor:
    """Differentiable soft mask of the triangulated polygon.

    ``vertices`` is a (k, 2) tensor of (x, y) pixel coordinates; gradient
    flows from every pixel back to the vertex positions.
    """
    if tau <= 0:
        raise ValueError(f"rasterize: tau must be positive, got {tau}")
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise ValueError(f"rasterize: expected (k, 2) vertices, got shape {vertices.shape}")
    vd = vertices.data
    if not np.all(np.isfinite(vd)):
        raise ValueError("rasterize: non-finite vertex coordinates")
    faces = canonical_faces(faces)

    # run the forward here so the backward can reuse the face geometry
    v64 = np.asarray(vd, dtype=np.float64)
    pts = _pixel_grid(h, w)
    faces_arr = np.asarray(faces, dtype=np.intp).reshape(len(faces), 3)
    occ = np.empty((len(faces), h * w))
    geom = {}
    for lo, hi in _face_blocks(len(faces), h * w):
        geom[lo, hi] = _faces_geometry(v64, faces_arr[lo:hi], pts)
        occ[lo:hi] = _sigmoid64(-geom[lo, hi][0] / tau)
    if len(faces) == 0:
        mask = np.zeros((h, w))
    else:
        mask = (1.0 - np.prod(1.0 - occ, axis=0)).reshape(h, w)

    def grad_fn(g):
        gv = soft_rasterize_grad(vd, faces, h, w, tau, occ, g, _geom=geom)
        return (gv.astype(np.float32),)

    return _record(mask.astype(np.float32), (vertices,), grad_fn)


def hard_rasterize(vertices: np.ndarray, faces: Sequence, h: int, w: int) -> np.ndarray:
    """Binary pixel-center coverage of the face union (no gradients).

    Zero-area faces are skipped so degenerate triangles contribute nothing.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("hard_rasterize: non-finite vertex coordinates")
    pts = _pixel_grid(h, w)
    out = np.zeros(h * w, dtype=bool)
    span = max(float(np.ptp(v, axis=0).max()), 1.0) if len(v) else 1.0
    for face in faces:
        ia, ib, ic = face
        a, b, c = v[ia], v[ib], v[ic]
        area2 = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area2 <= 1e-12 * span * span:
            continue
        s = np.empty((3, pts.shape[0]))
        for e, (e0, e1) in enumerate(((a, b), (b, c), (c, a))):
            u = e1 - e0
            rel = pts - e0
            s[e] = u[0] * rel[:, 1] - u[1] * rel[:, 0]
        out |= ((s >= 0).all(axis=0)) | ((s <= 0).all(axis=0))
    return out.reshape(h, w).astype(np.float32)
