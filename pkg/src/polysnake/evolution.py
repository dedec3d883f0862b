"""Contour evolution: bilinear field sampling and the T-step vertex update.

The displacement field J is a (2, h, w) tensor (channel 0 = dx along
columns, channel 1 = dy along rows) predicted once per image and held
static; the polygon is what moves. One step reads J at each vertex with
bilinear interpolation, adds the sampled displacement, and clamps the
result to the image rectangle. Gradients flow both into the field values
and through the sampling coordinates, so iteration t feels the positions
produced by iterations 1..t-1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dataclass_field
from typing import List, Optional, Sequence

import numpy as np

from .render import hard_rasterize, rasterize
from .tensor import Tensor, _record, concat


def bilinear_sample_forward(field: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample a (c, h, w) field at (k, 2) points (x, y); dtype follows input."""
    _, h, w = field.shape
    x, y = coords[:, 0], coords[:, 1]
    x0 = np.clip(np.floor(x), 0, w - 2).astype(int)
    y0 = np.clip(np.floor(y), 0, h - 2).astype(int)
    fx = x - x0
    fy = y - y0
    f00 = field[:, y0, x0]
    f01 = field[:, y0, x0 + 1]
    f10 = field[:, y0 + 1, x0]
    f11 = field[:, y0 + 1, x0 + 1]
    top = f00 * (1 - fx) + f01 * fx
    bot = f10 * (1 - fx) + f11 * fx
    return (top * (1 - fy) + bot * fy).T  # (k, c)


def sample_field(field: Tensor, coords: Tensor) -> Tensor:
    """Differentiable bilinear read of the displacement field at vertices.

    Returns a (k, 2) tensor of (dx, dy). Gradients propagate to the four
    surrounding texels per point and, via the piecewise-linear kernel, to
    the point coordinates themselves. Points must lie in
    [0, w-1] x [0, h-1].
    """
    if field.ndim != 3 or field.shape[0] != 2:
        raise ValueError(f"sample_field: expected (2, h, w) field, got shape {field.shape}")
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"sample_field: expected (k, 2) points, got shape {coords.shape}")
    _, h, w = field.shape
    cd = coords.data.astype(np.float64)
    x, y = cd[:, 0], cd[:, 1]
    if (x < 0).any() or (x > w - 1).any() or (y < 0).any() or (y > h - 1).any():
        bad = int(np.argmax((x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)))
        raise ValueError(
            f"sample_field: point {bad} at ({x[bad]:.3f}, {y[bad]:.3f}) outside "
            f"[0, {w - 1}] x [0, {h - 1}]")

    x0 = np.clip(np.floor(x), 0, w - 2).astype(int)
    y0 = np.clip(np.floor(y), 0, h - 2).astype(int)
    fx = x - x0
    fy = y - y0
    fd = field.data.astype(np.float64)
    f00 = fd[:, y0, x0]
    f01 = fd[:, y0, x0 + 1]
    f10 = fd[:, y0 + 1, x0]
    f11 = fd[:, y0 + 1, x0 + 1]
    out = ((f00 * (1 - fx) + f01 * fx) * (1 - fy)
           + (f10 * (1 - fx) + f11 * fx) * fy).T

    k = cd.shape[0]

    def grad_fn(g):
        gt = g.T.astype(np.float64)  # (2, k)
        gf = np.zeros_like(fd)
        w00 = (1 - fx) * (1 - fy)
        w01 = fx * (1 - fy)
        w10 = (1 - fx) * fy
        w11 = fx * fy
        for c in range(2):
            np.add.at(gf[c], (y0, x0), gt[c] * w00)
            np.add.at(gf[c], (y0, x0 + 1), gt[c] * w01)
            np.add.at(gf[c], (y0 + 1, x0), gt[c] * w10)
            np.add.at(gf[c], (y0 + 1, x0 + 1), gt[c] * w11)
        # derivative of the bilinear kernel w.r.t. the sample point
        dx = ((f01 - f00) * (1 - fy) + (f11 - f10) * fy)  # (2, k)
        dy = ((f10 - f00) * (1 - fx) + (f11 - f01) * fx)
        gc = np.stack([(gt * dx).sum(axis=0), (gt * dy).sum(axis=0)], axis=1)
        return gf.astype(np.float32), gc.astype(np.float32)

    return _record(out.astype(np.float32), (field, coords), grad_fn)


def step(polygon: Tensor, field: Tensor) -> Tensor:
    """One evolution step: p <- clamp(p + J(p)) onto the image rectangle.

    The clamp passes gradient straight through where it did not bind and
    zeroes it where it did, so the optimizer never pushes vertices further
    out of range.
    """
    disp = sample_field(field, polygon)
    if np.isnan(disp.data).any():
        raise ValueError("step: sampled displacement contains NaN")
    moved = polygon + disp
    _, h, w = field.shape
    x = moved[:, 0:1].clip(0.0, float(w - 1))
    y = moved[:, 1:2].clip(0.0, float(h - 1))
    return concat(x, y, axis=1)


@dataclass
class EvolutionTrace:
    """P^0..P^T plus the masks produced along the way.

    ``polygons`` holds T+1 vertex tensors sharing one face list; ``masks``
    holds the per-step soft masks in train mode and is empty in eval mode,
    where only ``hard_mask`` (binary coverage of P^T) is filled.
    """
    polygons: List[Tensor]
    faces: list
    masks: List[Tensor] = dataclass_field(default_factory=list)
    hard_mask: Optional[np.ndarray] = None


def evolve(p0, faces: Sequence, field: Tensor, iterations: int,
           mode: str = "train", tau: float = 1.0) -> EvolutionTrace:
    """Run ``iterations`` static-field steps from P^0.

    Train mode soft-rasterizes the polygon after every step (those masks
    feed the loss); eval mode hard-rasterizes only the final polygon. P^0
    is clamped onto the image rectangle before the first sampling, since a
    full-size initial circle touches coordinates half a pixel outside it.
    """
    if iterations < 1:
        raise ValueError(f"evolve: iterations must be >= 1, got {iterations}")
    if mode not in ("train", "eval"):
        raise ValueError(f"evolve: unknown mode {mode!r}")
    _, h, w = field.shape

    if not isinstance(p0, Tensor):
        p0 = Tensor(np.asarray(p0, dtype=np.float32))
    clamped = np.empty_like(p0.data)
    np.clip(p0.data[:, 0], 0.0, w - 1, out=clamped[:, 0])
    np.clip(p0.data[:, 1], 0.0, h - 1, out=clamped[:, 1])
    p = Tensor(clamped, requires_grad=p0.requires_grad)

    trace = EvolutionTrace(polygons=[p], faces=list(faces))
    for _ in range(iterations):
        p = step(p, field)
        trace.polygons.append(p)
        if mode == "train":
            trace.masks.append(rasterize(p, trace.faces, h, w, tau))
    if mode == "eval":
        trace.hard_mask = hard_rasterize(p.data, trace.faces, h, w)
    return trace


def export_trace(trace: EvolutionTrace, path) -> None:
    """Write per-iteration vertex positions as CSV (t, vertex_index, x, y)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "vertex_index", "x", "y"])
        for t, poly in enumerate(trace.polygons):
            for j, (x, y) in enumerate(poly.data):
                writer.writerow([t, j, f"{x:.6f}", f"{y:.6f}"])
