"""Central finite-difference oracles for verifying analytic gradients.

The engine stores activations in float32; to keep the oracle's noise floor
well below the comparison tolerances, callers pass a forward function that
recomputes the quantity of interest in float64 on a float64 copy of the
input. ``eps=1e-3`` balances truncation against roundoff for the smooth,
O(1)-scaled functions checked here.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np


def numerical_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                   eps: float = 1e-3) -> np.ndarray:
    """Dense central-difference gradient of a scalar function at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def numerical_grad_subset(f: Callable[[np.ndarray], float], x: np.ndarray,
                          flat_indices: Iterable[int],
                          eps: float = 1e-3) -> np.ndarray:
    """Central differences at selected flat indices only (cheap spot check).

    Returns an array shaped like ``x`` that is zero except at the probed
    entries; compare against the analytic gradient at the same indices.
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in flat_indices:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                floor: float = 1e-3) -> float:
    """Worst per-element relative error with an absolute floor.

    ``floor`` keeps near-zero gradient entries from amplifying the oracle's
    truncation noise into spurious failures: an element only contributes
    ``|a - n| / floor`` when both values are below ``floor`` in magnitude.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    scale = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0


def subset_indices(rng: np.random.Generator, total: int, count: int) -> np.ndarray:
    """Uniformly sampled distinct flat indices for subset checks."""
    count = min(count, total)
    return rng.choice(total, size=count, replace=False)
