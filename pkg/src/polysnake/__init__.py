"""polysnake: polygon active-contour segmentation with differentiable rendering.

A polygon is initialized as a circle, pushed for a few steps by a
displacement field predicted by a small U-Net, rasterized with a soft
(differentiable) renderer, and trained end to end against ground-truth
masks. Everything runs on numpy via a tiny reverse-mode autodiff engine.
"""

from .config import RunConfig
from .tensor import Tensor, concat, dropout, mse, no_grad
from .training import evaluate, infer, sweep, train
from .unet import UNet, UNetConfig

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "Tensor",
    "UNet",
    "UNetConfig",
    "concat",
    "dropout",
    "evaluate",
    "infer",
    "mse",
    "no_grad",
    "sweep",
    "train",
    "__version__",
]
