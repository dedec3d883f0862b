"""U-Net producing a dual-channel displacement field from an image.

Encoder block: three (conv3x3 -> dropout) sub-blocks, then ReLU, batchnorm
and 2x maxpool. Decoder block: batchnorm, ReLU, bilinear upsample to the
matching encoder feature size, concatenation with that feature, then three
(conv3x3 -> dropout) sub-blocks; the last decoder block omits dropout and
upsamples to the input image size. A final 1x1 convolution maps to two
channels (x and y displacement per pixel).

Channel widths double per level from ``base_channels``; decoder convolutions
reduce the concatenated features back to the width of the skip they consume.
The default head is linear so displacements are signed pixel offsets; the
``sigmoid`` head variant squashes to (-field_scale, field_scale) instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .nn import BNStats, batchnorm2d, bilinear_resize, conv2d, maxpool2d
from .tensor import Tensor, concat, dropout

__all__ = ["UNetConfig", "UNet"]


@dataclass(frozen=True)
class UNetConfig:
    # dropout off and a 16 px head gain by default: with a zero-initialized
    # head the field must grow from nothing within a short training budget,
    # and the gain is what makes boundary-scale displacements reachable
    in_channels: int = 3
    base_channels: int = 32
    depth: int = 4
    dropout_p: float = 0.0
    field_scale: float = 16.0
    head: str = "linear"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"UNetConfig: depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.base_channels < 1:
            raise ValueError(
                f"UNetConfig: channel counts must be >= 1, got "
                f"in={self.in_channels} base={self.base_channels}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"UNetConfig: dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.field_scale <= 0.0:
            raise ValueError(f"UNetConfig: field_scale must be > 0, got {self.field_scale}")
        if self.head not in ("linear", "sigmoid"):
            raise ValueError(f"UNetConfig: unknown head {self.head!r}")

    @property
    def widths(self):
        return [self.base_channels * (1 << i) for i in range(self.depth)]


class UNet:
    """Parameter container plus the forward pass.

    Parameters live in an ordered name -> Tensor dict (``enc0.conv1.w`` ...)
    built deterministically from the seed: conv weights are fan-in-scaled
    uniform, biases zero, batchnorm gains one and shifts zero. Running
    batchnorm statistics are buffers, saved with checkpoints but not
    optimized.
    """

    def __init__(self, cfg: UNetConfig, seed: int = 0):
        self.cfg = cfg
        self.params: Dict[str, Tensor] = {}
        self.stats: Dict[str, BNStats] = {}
        rng = np.random.default_rng(seed)
        w = cfg.widths

        for i in range(cfg.depth):
            c_in = cfg.in_channels if i == 0 else w[i - 1]
            self._add_conv(rng, f"enc{i}.conv1", w[i], c_in, 3)
            self._add_conv(rng, f"enc{i}.conv2", w[i], w[i], 3)
            self._add_conv(rng, f"enc{i}.conv3", w[i], w[i], 3)
            self._add_bn(f"enc{i}.bn", w[i])

        for j in range(cfg.depth):
            skip_c = w[cfg.depth - 1 - j]
            cur_c = w[cfg.depth - 1] if j == 0 else w[cfg.depth - j]
            self._add_bn(f"dec{j}.bn", cur_c)
            self._add_conv(rng, f"dec{j}.conv1", skip_c, cur_c + skip_c, 3)
            self._add_conv(rng, f"dec{j}.conv2", skip_c, skip_c, 3)
            self._add_conv(rng, f"dec{j}.conv3", skip_c, skip_c, 3)

        # zero-init so the initial field is identically zero: the contour
        # starts exactly on the seed circle instead of jumping randomly
        self._add_conv(rng, "head", 2, w[0], 1, zero=True)

    def _add_conv(self, rng, name: str, c_out: int, c_in: int, k: int,
                  zero: bool = False) -> None:
        limit = 0.0 if zero else math.sqrt(6.0 / (c_in * k * k))
        wdata = rng.uniform(-limit, limit, (c_out, c_in, k, k)).astype(np.float32)
        self.params[name + ".w"] = Tensor(wdata, requires_grad=True)
        self.params[name + ".b"] = Tensor(np.zeros(c_out, np.float32), requires_grad=True)

    def _add_bn(self, name: str, channels: int) -> None:
        self.params[name + ".gamma"] = Tensor(np.ones(channels, np.float32),
                                              requires_grad=True)
        self.params[name + ".beta"] = Tensor(np.zeros(channels, np.float32),
                                             requires_grad=True)
        self.stats[name] = BNStats(channels)

    # -- forward -----------------------------------------------------------------

    def forward(self, image: Tensor, mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Map a (c,h,w) image or (n,c,h,w) batch to a displacement field.

        Train mode applies dropout (mask drawn from ``rng``) and batch
        statistics; eval mode is deterministic and uses the running stats.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"UNet.forward: unknown mode {mode!r}")
        if mode == "train" and self.cfg.dropout_p > 0.0 and rng is None:
            raise ValueError("UNet.forward: train mode requires an rng for dropout")
        squeeze = image.ndim == 3
        x = image.reshape((1,) + image.shape) if squeeze else image
        if x.ndim != 4:
            raise ValueError(f"UNet.forward: expected 3D or 4D input, got shape {image.shape}")
        n, c, h, w = x.shape
        if c != self.cfg.in_channels:
            raise ValueError(
                f"UNet.forward: input has {c} channels, config expects "
                f"{self.cfg.in_channels}")
        div = 1 << self.cfg.depth
        if h % div or w % div:
            raise ValueError(
                f"UNet.forward: spatial size {h}x{w} not divisible by 2^depth={div}")

        p = self.params
        skips = []
        for i in range(self.cfg.depth):
            for jc in (1, 2, 3):
                x = conv2d(x, p[f"enc{i}.conv{jc}.w"], p[f"enc{i}.conv{jc}.b"], padding=1)
                x = dropout(x, self.cfg.dropout_p, mode, rng)
            x = x.relu()
            x = batchnorm2d(x, p[f"enc{i}.bn.gamma"], p[f"enc{i}.bn.beta"],
                            self.stats[f"enc{i}.bn"], mode)
            skips.append(x)
            x = maxpool2d(x, 2)

        for j in range(self.cfg.depth):
            skip = skips[self.cfg.depth - 1 - j]
            last = j == self.cfg.depth - 1
            x = batchnorm2d(x, p[f"dec{j}.bn.gamma"], p[f"dec{j}.bn.beta"],
                            self.stats[f"dec{j}.bn"], mode)
            x = x.relu()
            x = bilinear_resize(x, skip.shape[2], skip.shape[3])
            x = concat(x, skip, axis=1)
            for jc in (1, 2, 3):
                x = conv2d(x, p[f"dec{j}.conv{jc}.w"], p[f"dec{j}.conv{jc}.b"], padding=1)
                if not last:
                    x = dropout(x, self.cfg.dropout_p, mode, rng)

        z = conv2d(x, p["head.w"], p["head.b"])
        if self.cfg.head == "linear":
            out = z * self.cfg.field_scale if self.cfg.field_scale != 1.0 else z
        else:
            out = (z.sigmoid() * 2.0 - 1.0) * self.cfg.field_scale
        return out.reshape(out.shape[1:]) if squeeze else out

    # -- parameter access ----------------------------------------------------------

    def parameters(self) -> Dict[str, Tensor]:
        return self.params

    def num_parameters(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.params.values())

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Trainable parameters plus batchnorm running buffers."""
        out = {k: t.data for k, t in self.params.items()}
        for name, st in self.stats.items():
            out[name + ".running_mean"] = st.mean
            out[name + ".running_var"] = st.var
        return out

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_arrays())
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(
                f"UNet.load_state: name mismatch (missing {missing}, "
                f"unexpected {extra})")
        for k, t in self.params.items():
            a = np.asarray(arrays[k], dtype=np.float32)
            if a.shape != t.data.shape:
                raise ValueError(
                    f"UNet.load_state: {k!r} has shape {a.shape}, expected {t.data.shape}")
            t.data = a.copy()
        for name, st in self.stats.items():
            st.mean = np.asarray(arrays[name + ".running_mean"], np.float32).copy()
            st.var = np.asarray(arrays[name + ".running_var"], np.float32).copy()
