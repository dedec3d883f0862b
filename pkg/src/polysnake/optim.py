"""Adam optimizer over named parameter tensors.

The optimizer owns per-parameter first/second moment buffers and a step
counter, all exposed as flat float32 arrays so they can be written to a
checkpoint next to the model parameters and reloaded to resume training
mid-run without changing the trajectory.
"""

from __future__ import annotations

from typing import Dict, Iterable, Tuple

import numpy as np

from .tensor import Tensor

__all__ = ["Adam", "adam_step"]


def adam_step(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float, beta2: float,
              eps: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update for a single parameter array.

    ``t`` is the 1-based step index. Returns the new (param, m, v) triple
    without mutating the inputs.
    """
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p, m, v


class Adam:
    """Bias-corrected Adam over a dict of named parameter tensors.

    Gradients are read from each tensor's ``.grad``; a missing gradient is
    treated as zero, which leaves the parameter (and its moments) unchanged.
    Non-finite gradients abort the step with the offending parameter named
    in the error.
    """

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError(f"Adam: lr must be > 0, got {lr}")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError(f"Adam: betas must lie in [0, 1), got {beta1}, {beta2}")
        if eps <= 0.0:
            raise ValueError(f"Adam: eps must be > 0, got {eps}")
        if not params:
            raise ValueError("Adam: empty parameter dict")
        for name, p in params.items():
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise ValueError(f"Adam: parameter {name!r} is not a trainable tensor")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """Apply one update using the gradients currently stored on the params."""
        for name, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise ValueError(f"Adam: non-finite gradient for parameter {name!r}")
        self.t += 1
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            new_p, self.m[name], self.v[name] = adam_step(
                p.data, g, self.m[name], self.v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps)
            p.data = new_p.astype(np.float32)

    # -- checkpoint support ------------------------------------------------------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Flatten moments and step count into named float32 arrays."""
        out: Dict[str, np.ndarray] = {"step": np.asarray(self.t, dtype=np.float32)}
        for name in self.params:
            out[name + ".m"] = self.m[name]
            out[name + ".v"] = self.v[name]
        return out

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        """Restore moments/step from :meth:`state_arrays` output."""
        if "step" not in arrays:
            raise ValueError("Adam: state is missing the 'step' counter")
        expected = set(self._state_names())
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(
                f"Adam: state name mismatch (missing {missing}, unexpected {extra})")
        for name, p in self.params.items():
            for key in (name + ".m", name + ".v"):
                if arrays[key].shape != p.data.shape:
                    raise ValueError(
                        f"Adam: state {key!r} has shape {arrays[key].shape}, "
                        f"expected {p.data.shape}")
        self.t = int(arrays["step"])
        for name in self.params:
            self.m[name] = np.asarray(arrays[name + ".m"], dtype=np.float32).copy()
            self.v[name] = np.asarray(arrays[name + ".v"], dtype=np.float32).copy()

    def _state_names(self) -> Iterable[str]:
        yield "step"
        for name in self.params:
            yield name + ".m"
            yield name + ".v"
