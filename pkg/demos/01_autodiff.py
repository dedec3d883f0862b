"""Tour of the reverse-mode tensor engine.

The whole pipeline (network, rasterizer, contour evolution, losses) is
built on one Tensor class that records closures onto a tape and replays
them in reverse. This script builds a few small graphs by hand, inspects
the gradients, and verifies one of them against central finite
differences, the same oracle the test suite uses.

Run from the repository root:

    python demos/01_autodiff.py
"""
import numpy as np

from polysnake.gradcheck import max_rel_err, numerical_grad
from polysnake.tensor import Tensor, dropout, mse, no_grad

print("== scalars and elementwise graphs ==")

# y = sigmoid(a * b + c).sum(); every op returns a new node on the tape
a = Tensor(np.array([0.5, -1.0, 2.0], np.float32), requires_grad=True)
b = Tensor(np.array([1.5, 0.25, -0.75], np.float32), requires_grad=True)
c = Tensor(np.array([0.0, 1.0, -2.0], np.float32), requires_grad=True)
y = ((a * b + c).sigmoid()).sum()
y.backward()
print(f"y            = {y.item():.6f}")
print(f"dy/da        = {a.grad}")
print(f"dy/db        = {b.grad}")
print(f"dy/dc        = {c.grad}")

print()
print("== gradient check against finite differences ==")


# the same scalar as a plain numpy function of the flat input
def f(x: np.ndarray) -> float:
    t = Tensor(x.astype(np.float32), requires_grad=True)
    return ((t * b.detach() + c.detach()).sigmoid()).sum().item()


num = numerical_grad(f, a.data.astype(np.float64))
err = max_rel_err(a.grad.astype(np.float64), num)
print(f"analytic     = {a.grad}")
print(f"numeric      = {num}")
print(f"max rel err  = {err:.2e}  (suite tolerance for tensor ops: 1e-3)")
assert err < 1e-3

print()
print("== reductions, clipping, and indexing ==")

m = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4), requires_grad=True)
# clip zeroes the gradient wherever the bound is active
z = m.clip(2.0, 9.0).mean()
z.backward()
print(f"clip(2,9).mean() grad:\n{m.grad}")
print("entries at the clamp bounds get zero gradient")

m.zero_grad()
row = m[1]
row.sum().backward()
print(f"m[1].sum() routes gradient only into row 1:\n{m.grad}")

print()
print("== mse and roll, the loss-side primitives ==")

pred = Tensor(np.array([[0.2, 0.8], [0.6, 0.4]], np.float32), requires_grad=True)
gt = Tensor(np.array([[0.0, 1.0], [1.0, 0.0]], np.float32))
loss = mse(pred, gt)
loss.backward()
print(f"mse          = {loss.item():.6f}")
print(f"d mse/d pred =\n{pred.grad}")

ring = Tensor(np.array([1.0, 2.0, 3.0, 4.0], np.float32), requires_grad=True)
# roll is how neighboring vertices meet in the curvature term
lap = ring.roll(1, 0) + ring.roll(-1, 0) - ring - ring
(lap * lap).sum().backward()
print(f"discrete-Laplacian energy grad = {ring.grad}")

print()
print("== modes: no_grad and dropout ==")

with no_grad():
    silent = (a.detach() * 2.0).sum()
print(f"under no_grad the result is grad-free: requires_grad={silent.requires_grad}")

x = Tensor(np.ones((2, 8), np.float32), requires_grad=True)
rng = np.random.default_rng(0)
train_out = dropout(x, 0.5, mode="train", rng=rng)
eval_out = dropout(x, 0.5, mode="eval")
print(f"dropout train row: {train_out.data[0]}")
print(f"dropout eval  row: {eval_out.data[0]}  (identity at eval time)")

print()
print("done: every printed gradient came off the same tape the model trains with")
