"""Training losses: segmentation, balloon, curvature, and their combination.

All three terms are evaluated after every evolution step and summed over
the T iterations, matching the training loop: the intermediate polygons
are supervised, not just the final one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from .tensor import Tensor, mse

MaskLike = Union[Tensor, np.ndarray]


@dataclass
class LossWeights:
    """lambda1 scales the balloon term, lambda2 the curvature term."""
    lambda1: float = 1e-3
    lambda2: float = 2e-3

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError(
                f"LossWeights: weights must be non-negative, "
                f"got lambda1={self.lambda1}, lambda2={self.lambda2}")


def _as_tensor(m: MaskLike) -> Tensor:
    return m if isinstance(m, Tensor) else Tensor(m)


def seg_loss(masks: Sequence[MaskLike], gt: MaskLike) -> Tensor:
    """Sum over iterations of the per-pixel MSE against the ground truth."""
    gt = _as_tensor(gt)
    if not masks:
        raise ValueError("seg_loss: need at least one mask")
    total = None
    for m in masks:
        m = _as_tensor(m)
        if m.shape != gt.shape:
            raise ValueError(f"seg_loss: mask shape {m.shape} != gt shape {gt.shape}")
        term = mse(m, gt)
        total = term if total is None else total + term
    return total


def balloon_loss(mask: MaskLike) -> Tensor:
    """Mean of (1 - mask): small when the polygon covers much of the image."""
    return (1.0 - _as_tensor(mask)).mean()


def curvature_loss(polygon: Tensor) -> Tensor:
    """Mean length of the cyclic second difference of the vertex sequence.

    (1/k) * sum_j ||p_{j-1} - 2 p_j + p_{j+1}||_2 with wraparound indexing;
    zero for equally spaced collinear runs, 2r(1 - cos(2 pi / k)) for a
    regular k-gon of radius r. The tiny epsilon under the square root only
    guards the non-differentiable zero and biases each term by at most 1e-6.
    """
    p = _as_tensor(polygon)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
        raise ValueError(f"curvature_loss: expected (k >= 3, 2) vertices, got shape {p.shape}")
    second = p.roll(1, axis=0) + p.roll(-1, axis=0) - p * 2.0
    sq = (second * second).sum(axis=1)
    return (sq + 1e-12).sqrt().mean()


def total_loss(masks: Sequence[MaskLike], gt: MaskLike,
               polygons: Sequence[Tensor], weights: LossWeights) -> Tensor:
    """Per-iteration sum of mse + lambda1*balloon + lambda2*curvature.

    ``polygons`` are P^1..P^T, aligned with ``masks``. Zero-weight terms
    are skipped entirely, so lambda1 = lambda2 = 0 reproduces ``seg_loss``
    bit for bit (the ablation identity).
    """
    if len(masks) != len(polygons):
        raise ValueError(
            f"total_loss: {len(masks)} masks vs {len(polygons)} polygons")
    gt = _as_tensor(gt)
    total = None
    for m, p in zip(masks, polygons):
        m = _as_tensor(m)
        if m.shape != gt.shape:
            raise ValueError(f"total_loss: mask shape {m.shape} != gt shape {gt.shape}")
        term = mse(m, gt)
        if weights.lambda1 != 0.0:
            term = term + balloon_loss(m) * weights.lambda1
        if weights.lambda2 != 0.0:
            term = term + curvature_loss(p) * weights.lambda2
        total = term if total is None else total + term
    return total
