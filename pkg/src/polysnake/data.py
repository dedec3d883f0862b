"""Synthetic datasets, augmentation and image IO.

Each sample is a single roughly centered foreground shape on a textured
background. Masks are evaluated analytically at pixel centers, so the
ground truth is exact for the drawn shape; generation retries until the
mask is one 4-connected component covering 5 to 60 percent of the image.

On disk a dataset is ``<root>/images/<id>.png`` (RGB), ``<root>/masks/
<id>.png`` (8-bit grayscale, foreground = 255) and an ``index.csv`` manifest
with ``id,split`` rows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.spatial import ConvexHull

__all__ = ["Sample", "SyntheticSpec", "generate", "augment", "AUG_SCALES",
           "AUG_ROTATIONS", "save_png", "load_png", "split",
           "save_dataset", "load_dataset"]

FAMILIES = ("convex-polygon", "star", "ellipse", "rounded-rect", "mix")
TEXTURES = ("flat", "gradient", "speckle")

AUG_SCALES = (0.75, 1.0, 1.25, 1.5)
AUG_ROTATIONS = (0, 15, 45, 60, 90, 135, 180, 210, 240, 270)


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self):
        img = np.asarray(self.image)
        msk = np.asarray(self.mask)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ValueError(f"Sample {self.id!r}: image shape {img.shape} is not (3,h,w)")
        if msk.shape != img.shape[1:]:
            raise ValueError(
                f"Sample {self.id!r}: mask shape {msk.shape} != image spatial "
                f"shape {img.shape[1:]}")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError(f"Sample {self.id!r}: image values outside [0, 1]")
        if not np.isin(np.unique(msk), (0, 1)).all():
            raise ValueError(f"Sample {self.id!r}: mask is not binary")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    size: int = 64
    shape_family: str = "mix"
    noise_sigma: float = 0.02
    texture: str = "speckle"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"SyntheticSpec: n must be >= 1, got {self.n}")
        if self.size < 8:
            raise ValueError(f"SyntheticSpec: size must be >= 8, got {self.size}")
        if self.shape_family not in FAMILIES:
            raise ValueError(
                f"SyntheticSpec: unknown shape_family {self.shape_family!r} "
                f"(choices: {', '.join(FAMILIES)})")
        if self.noise_sigma < 0.0:
            raise ValueError(f"SyntheticSpec: noise_sigma must be >= 0")
        if self.texture not in TEXTURES:
            raise ValueError(
                f"SyntheticSpec: unknown texture {self.texture!r} "
                f"(choices: {', '.join(TEXTURES)})")


# -- shape masks -----------------------------------------------------------------


_CROSS = ndimage.generate_binary_structure(2, 1)


def _pixel_centers(size: int):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return xx, yy


def _mask_convex_polygon(rng, size, cx, cy, r0):
    ang = np.sort(rng.uniform(0.0, 2.0 * math.pi, rng.integers(5, 11)))
    rad = r0 * rng.uniform(0.6, 1.0, ang.size)
    pts = np.stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)], axis=1)
    hull = pts[ConvexHull(pts).vertices]  # counter-clockwise
    xx, yy = _pixel_centers(size)
    inside = np.ones((size, size), dtype=bool)
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        inside &= ((b[0] - a[0]) * (yy - a[1]) - (b[1] - a[1]) * (xx - a[0])) >= 0.0
    return inside


def _mask_star(rng, size, cx, cy, r0):
    lobes = rng.integers(5, 10)
    amp = rng.uniform(0.2, 0.4)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    xx, yy = _pixel_centers(size)
    dx, dy = xx - cx, yy - cy
    theta = np.arctan2(dy, dx)
    rim = r0 * (1.0 + amp * np.cos(lobes * theta + phase))
    return dx * dx + dy * dy <= rim * rim


def _mask_ellipse(rng, size, cx, cy, r0):
    a = r0 * rng.uniform(0.7, 1.0)
    b = r0 * rng.uniform(0.45, 0.8)
    phi = rng.uniform(0.0, math.pi)
    xx, yy = _pixel_centers(size)
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(phi) + dy * math.sin(phi)
    v = -dx * math.sin(phi) + dy * math.cos(phi)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _mask_rounded_rect(rng, size, cx, cy, r0):
    hw = r0 * rng.uniform(0.8, 1.2)
    hh = r0 * rng.uniform(0.55, 0.9)
    rc = rng.uniform(0.15, 0.45) * min(hw, hh)
    phi = rng.uniform(0.0, math.pi)
    xx, yy = _pixel_centers(size)
    dx, dy = xx - cx, yy - cy
    u = np.abs(dx * math.cos(phi) + dy * math.sin(phi))
    v = np.abs(-dx * math.sin(phi) + dy * math.cos(phi))
    qx = np.maximum(u - (hw - rc), 0.0)
    qy = np.maximum(v - (hh - rc), 0.0)
    return np.hypot(qx, qy) <= rc


_SHAPE_FNS = {
    "convex-polygon": _mask_convex_polygon,
    "star": _mask_star,
    "ellipse": _mask_ellipse,
    "rounded-rect": _mask_rounded_rect,
}


def _draw_mask(rng, size: int, family: str) -> Tuple[np.ndarray, str]:
    """One valid mask: single 4-connected component, area in [5%, 60%]."""
    area = size * size
    for _ in range(500):
        fam = rng.choice(list(_SHAPE_FNS)) if family == "mix" else family
        jitter = 0.1 * size
        cx = (size - 1) / 2.0 + rng.uniform(-jitter, jitter)
        cy = (size - 1) / 2.0 + rng.uniform(-jitter, jitter)
        r0 = size * rng.uniform(0.15, 0.38)
        mask = _SHAPE_FNS[fam](rng, size, cx, cy, r0)
        frac = mask.sum() / area
        if not 0.05 <= frac <= 0.60:
            continue
        _, ncomp = ndimage.label(mask, structure=_CROSS)
        if ncomp == 1:
            return mask, fam
    raise RuntimeError(f"generate: no valid {family} mask after 500 attempts")


def _texture_image(rng, mask: np.ndarray, texture: str,
                   noise_sigma: float) -> np.ndarray:
    size = mask.shape[0]
    lo = rng.uniform(0.10, 0.40)
    hi = rng.uniform(0.60, 0.90)
    fg, bg = (hi, lo) if rng.random() < 0.5 else (lo, hi)
    img = np.where(mask, fg, bg)
    if texture == "gradient":
        xx, yy = _pixel_centers(size)
        gx = rng.uniform(-0.075, 0.075)
        gy = rng.uniform(-0.075, 0.075)
        img = img + gx * (xx / size - 0.5) + gy * (yy / size - 0.5)
    elif texture == "speckle":
        img = img + rng.uniform(-0.08, 0.08, mask.shape)
    if noise_sigma > 0.0:
        img = img + rng.normal(0.0, noise_sigma, mask.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return np.repeat(img[None], 3, axis=0)


def generate(spec: SyntheticSpec) -> List[Sample]:
    """Seed-deterministic synthetic samples for the given spec."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for i in range(spec.n):
        mask, fam = _draw_mask(rng, spec.size, spec.shape_family)
        image = _texture_image(rng, mask, spec.texture, spec.noise_sigma)
        out.append(Sample(image=image, mask=mask.astype(np.uint8),
                          id=f"{fam}-{i:05d}"))
    return out


# -- augmentation ----------------------------------------------------------------


_EXACT_TRIG = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}


def _rotation(rot_deg: float) -> Tuple[float, float]:
    r = rot_deg % 360.0
    if r == int(r) and int(r) in _EXACT_TRIG:
        return _EXACT_TRIG[int(r)]
    return math.cos(math.radians(r)), math.sin(math.radians(r))


def augment(sample: Sample, scale: float, rot_deg: float) -> Sample:
    """Scale and rotate about the image center, keeping the original frame.

    The image is resampled bilinearly (edges replicated where the source
    falls outside the frame); the mask uses nearest-neighbor with background
    outside, so it stays binary. Rotations at multiples of 90 degrees land
    on exact pixel positions and are pure index permutations.
    """
    if scale <= 0.0:
        raise ValueError(f"augment: scale must be > 0, got {scale}")
    img, mask = sample.image, sample.mask
    h, w = mask.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos, sin = _rotation(rot_deg)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse map: rotate by -rot and divide by scale
    sx = (cos * dx + sin * dy) / scale + cx
    sy = (-sin * dx + cos * dy) / scale + cy

    cxs = np.clip(sx, 0.0, w - 1.0)
    cys = np.clip(sy, 0.0, h - 1.0)
    x0 = np.clip(np.floor(cxs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(cys).astype(int), 0, h - 2)
    fx, fy = cxs - x0, cys - y0
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    chans = []
    for c in range(img.shape[0]):
        ch = img[c].astype(np.float64)
        chans.append(w00 * ch[y0, x0] + w01 * ch[y0, x0 + 1]
                     + w10 * ch[y0 + 1, x0] + w11 * ch[y0 + 1, x0 + 1])
    new_img = np.clip(np.stack(chans), 0.0, 1.0).astype(np.float32)

    nx = np.rint(sx).astype(int)
    ny = np.rint(sy).astype(int)
    valid = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    new_mask = np.zeros_like(mask)
    new_mask[valid] = mask[ny[valid], nx[valid]]
    return Sample(image=new_img, mask=new_mask,
                  id=f"{sample.id}_s{scale:g}_r{rot_deg:g}")


# -- PNG IO ------------------------------------------------------------------------


def save_png(path, array: np.ndarray) -> None:
    """Write an RGB image (3,h,w float in [0,1]) or a binary mask (h,w)."""
    path = Path(path)
    a = np.asarray(array)
    if a.ndim == 3 and a.shape[0] == 3:
        data = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(path)
    elif a.ndim == 2:
        if not np.isin(np.unique(a), (0, 1)).all():
            raise ValueError(f"save_png: {path}: 2D array is not a binary mask")
        Image.fromarray((a.astype(np.uint8) * 255), mode="L").save(path)
    else:
        raise ValueError(f"save_png: {path}: unsupported array shape {a.shape}")


def load_png(path) -> np.ndarray:
    """Read a PNG: RGB files give a (3,h,w) float32 image in [0,1]; 8-bit
    grayscale files give a binary (h,w) uint8 mask (threshold at 128)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            data = np.asarray(im)
    except FileNotFoundError:
        raise FileNotFoundError(f"load_png: no such file: {path}")
    except Exception as exc:
        raise ValueError(f"load_png: cannot read {path}: {exc}")
    if mode == "RGB":
        return (data.astype(np.float32) / 255.0).transpose(2, 0, 1)
    if mode == "L":
        return (data >= 128).astype(np.uint8)
    raise ValueError(f"load_png: {path}: unsupported PNG mode {mode!r} "
                     "(expected RGB image or 8-bit grayscale mask)")


# -- dataset handling ---------------------------------------------------------------


def split(samples: Sequence[Sample], train_frac: float,
          seed: int) -> Tuple[List[Sample], List[Sample]]:
    """Seed-deterministic disjoint train/test partition."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"split: train_frac must be in (0, 1), got {train_frac}")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(train_frac * len(samples)))
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    return train, test


def save_dataset(root, samples: Sequence[Sample],
                 splits: Dict[str, str]) -> None:
    """Write images/, masks/ and index.csv; ``splits`` maps id -> split name."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        if s.id not in splits:
            raise ValueError(f"save_dataset: no split assigned for sample {s.id!r}")
        save_png(root / "images" / f"{s.id}.png", s.image)
        save_png(root / "masks" / f"{s.id}.png", s.mask)
    with open(root / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split"])
        for s in samples:
            writer.writerow([s.id, splits[s.id]])


def load_dataset(root, split_name: Optional[str] = None) -> List[Sample]:
    """Read samples listed in index.csv, optionally filtered by split."""
    root = Path(root)
    index = root / "index.csv"
    if not index.exists():
        raise FileNotFoundError(f"load_dataset: missing manifest {index}")
    out = []
    with open(index, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"id", "split"} - set(reader.fieldnames):
            raise ValueError(f"load_dataset: {index} must have id,split columns")
        for row in reader:
            if split_name is not None and row["split"] != split_name:
                continue
            sid = row["id"]
            image = load_png(root / "images" / f"{sid}.png")
            mask = load_png(root / "masks" / f"{sid}.png")
            if image.ndim != 3:
                raise ValueError(f"load_dataset: {root / 'images' / (sid + '.png')} "
                                 "is not an RGB image")
            if mask.ndim != 2:
                raise ValueError(f"load_dataset: {root / 'masks' / (sid + '.png')} "
                                 "is not a grayscale mask")
            out.append(Sample(image=image, mask=mask, id=sid))
    return out
