"""Minimal reverse-mode autodiff engine on float32 numpy arrays.

Every differentiable step in the toolkit (network layers, field sampling,
rasterization, losses) is expressed as an operation on :class:`Tensor`.
Each op records its parents and a closure that maps the output gradient to
parent gradients; ``backward()`` replays those closures in reverse
topological order and accumulates gradients into ``requires_grad`` leaves.

Tensors are immutable after creation except for gradient accumulation.
There is deliberately no general broadcasting: binary ops require equal
shapes or a Python scalar, which keeps gradient bookkeeping trivial and
matches what the segmentation pipeline needs.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

Scalar = Union[int, float]

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (used for eval/infer)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float32 ndarray plus the bookkeeping needed for backpropagation.

    Attributes:
        data: the underlying float32 numpy array (treat as read-only).
        grad: accumulated gradient, same shape as ``data``; ``None`` until
            ``backward`` reaches this tensor, and only ever populated on
            leaves created with ``requires_grad=True``.
        requires_grad: whether gradients flow into / through this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: Tuple[Tensor, ...] = ()
        self._grad_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The raw array (shared storage; do not mutate)."""
        return self.data

    def detach(self) -> "Tensor":
        """A graph-free view of the same values."""
        return Tensor(self.data)

    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph plumbing ------------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode accumulation from a scalar output.

        Gradients of intermediate nodes are kept in a transient table;
        only ``requires_grad`` leaves end up with ``.grad`` set. Calling
        backward twice without zeroing accumulates additively.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is not None:
                for parent, pg in zip(node._parents, node._grad_fn(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
            elif node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("add", self, other)
            return _record(self.data + other.data, (self, other),
                           lambda g: (g, g))
        return _record(self.data + np.float32(other), (self,), lambda g: (g,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("sub", self, other)
            return _record(self.data - other.data, (self, other),
                           lambda g: (g, -g))
        return _record(self.data - np.float32(other), (self,), lambda g: (g,))

    def __rsub__(self, other):
        # scalar - tensor
        return _record(np.float32(other) - self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("mul", self, other)
            a, b = self.data, other.data
            return _record(a * b, (self, other),
                           lambda g: (g * b, g * a))
        c = np.float32(other)
        return _record(self.data * c, (self,), lambda g: (g * c,))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return self * (1.0 / float(other))

    def __neg__(self):
        return _record(-self.data, (self,), lambda g: (-g,))

    # -- reductions and shaping ----------------------------------------------

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def grad_fn(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(np.float32, copy=True),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).astype(np.float32, copy=True),)

        return _record(out, (self,), grad_fn)

    def mean(self) -> "Tensor":
        n = self.data.size
        shape = self.shape
        return _record(self.data.mean(), (self,),
                       lambda g: (np.broadcast_to(g / n, shape).astype(np.float32, copy=True),))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _record(self.data.reshape(shape), (self,),
                       lambda g: (g.reshape(old),))

    def roll(self, shift: int, axis: int) -> "Tensor":
        return _record(np.roll(self.data, shift, axis=axis), (self,),
                       lambda g: (np.roll(g, -shift, axis=axis),))

    def __getitem__(self, idx) -> "Tensor":
        out = self.data[idx]
        shape = self.shape

        def grad_fn(g):
            gx = np.zeros(shape, dtype=np.float32)
            gx[idx] = g
            return (gx,)

        return _record(out, (self,), grad_fn)

    # -- elementwise nonlinearities --------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return _record(np.where(mask, self.data, np.float32(0)), (self,),
                       lambda g: (g * mask,))

    def sigmoid(self) -> "Tensor":
        s = _sigmoid(self.data)
        return _record(s, (self,), lambda g: (g * s * (1 - s),))

    def sqrt(self) -> "Tensor":
        r = np.sqrt(self.data)
        return _record(r, (self,), lambda g: (g * 0.5 / np.maximum(r, np.float32(1e-20)),))

    def clip(self, lo: float, hi: float) -> "Tensor":
        # Gradient is straight-through where the value was in range and
        # zero where it was clamped.
        mask = (self.data >= lo) & (self.data <= hi)
        return _record(np.clip(self.data, lo, hi), (self,),
                       lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _record(data: np.ndarray, parents: Tuple[Tensor, ...], grad_fn) -> Tensor:
    """Wrap an op result, attaching the graph edge when recording is on."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


# -- free functions ------------------------------------------------------------


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    """Concatenate two tensors along ``axis`` (other axes must match)."""
    if not (-a.ndim <= axis < a.ndim):
        raise ValueError(f"concat: axis {axis} out of range for ndim {a.ndim}")
    axis = axis % a.ndim
    if a.ndim != b.ndim or any(
        sa != sb for i, (sa, sb) in enumerate(zip(a.shape, b.shape)) if i != axis
    ):
        raise ValueError(f"concat: incompatible shapes {a.shape} vs {b.shape} on axis {axis}")
    na = a.shape[axis]

    def grad_fn(g):
        ga, gb = np.split(g, [na], axis=axis)
        return ga, gb

    return _record(np.concatenate([a.data, b.data], axis=axis), (a, b), grad_fn)


def dropout(x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale survivors.

    Eval mode is the exact identity. Train mode draws the mask from ``rng``
    so a fixed seed replays the same masks.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout: unknown mode {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: train mode requires an rng")
    scale = np.float32(1.0 / (1.0 - p))
    mask = (rng.random(x.shape) >= p).astype(np.float32) * scale
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    _check_same_shape("mse", a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    n = diff.size
    val = np.float32((diff * diff).mean())
    scaled = (2.0 / n) * diff

    def grad_fn(g):
        ga = (g * scaled).astype(np.float32)
        return ga, -ga

    return _record(val, (a, b), grad_fn)
