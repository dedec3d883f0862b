"""Overlay rendering for qualitative inspection.

One image per sample: blue initial contour, yellow final contour, green
ground-truth boundary, drawn over the (grayscale-ish) input. Colors follow
the usual before/after/reference convention so runs are comparable at a
glance.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from .metrics import boundary

__all__ = ["COLOR_INITIAL", "COLOR_FINAL", "COLOR_GT", "overlay", "save_overlay"]

COLOR_INITIAL = (40, 90, 255)
COLOR_FINAL = (255, 220, 0)
COLOR_GT = (0, 200, 70)


def _base_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[0] == 3:
        img = np.transpose(img, (1, 2, 0))
    elif img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    else:
        raise ValueError(f"overlay: expected (3,h,w) or (h,w) image, got {img.shape}")
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def _draw_polygon(draw: ImageDraw.ImageDraw, polygon: np.ndarray, color,
                  scale: int, width: int) -> None:
    pts = np.asarray(polygon, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError(f"overlay: polygon must be (k>=3, 2), got {pts.shape}")
    xy = [(float(x) * scale + (scale - 1) / 2.0,
           float(y) * scale + (scale - 1) / 2.0) for x, y in pts]
    draw.line(xy + [xy[0]], fill=color, width=width, joint="curve")


def overlay(image: np.ndarray, initial: Optional[np.ndarray] = None,
            final: Optional[np.ndarray] = None,
            gt_mask: Optional[np.ndarray] = None,
            scale: int = 4, width: int = 2) -> Image.Image:
    """Compose the overlay; any of the three annotations may be omitted.

    ``scale`` is an integer nearest-neighbor upscale so thumbnail-sized
    inputs stay legible; contour coordinates are mapped to pixel centers
    of the scaled grid.
    """
    if scale < 1:
        raise ValueError(f"overlay: scale must be >= 1, got {scale}")
    base = _base_rgb(image)
    h, w = base.shape[:2]
    if gt_mask is not None:
        edge = boundary(gt_mask).astype(bool)
        if edge.shape != (h, w):
            raise ValueError(
                f"overlay: gt mask shape {edge.shape} does not match image {(h, w)}")
        base = base.copy()
        base[edge] = COLOR_GT
    im = Image.fromarray(base, mode="RGB")
    if scale > 1:
        im = im.resize((w * scale, h * scale), Image.NEAREST)
    draw = ImageDraw.Draw(im)
    if initial is not None:
        _draw_polygon(draw, initial, COLOR_INITIAL, scale, width)
    if final is not None:
        _draw_polygon(draw, final, COLOR_FINAL, scale, width)
    return im


def save_overlay(path, image, initial=None, final=None, gt_mask=None,
                 scale: int = 4, width: int = 2) -> None:
    overlay(image, initial, final, gt_mask, scale, width).save(path, format="PNG")
