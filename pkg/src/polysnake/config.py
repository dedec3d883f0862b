"""Run configuration and its flat key=value text format.

The same format serves as CLI config file and as the snapshot written
into every run directory, so a finished run can be reproduced from its
own artifacts. Nested U-Net fields use a ``unet.`` prefix::

    k=16
    iterations=3
    unet.depth=4
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, get_type_hints

from .unet import UNetConfig

__all__ = ["RunConfig", "config_to_text", "config_from_text", "parse_kv_text"]


@dataclass(frozen=True)
class RunConfig:
    # loss weights are balanced against the mean-squared segmentation term;
    # see README (training defaults) for how they were chosen
    k: int = 16
    iterations: int = 3
    lambda1: float = 0.001
    lambda2: float = 0.002
    lr: float = 0.001
    batch: int = 8
    epochs: int = 30
    tau: float = 1.0
    seed: int = 0
    diameter: float = 16.0
    threads: int = 1
    patience: int = 0
    data_dir: str = ""
    out_dir: str = ""
    unet: UNetConfig = field(default_factory=UNetConfig)

    def __post_init__(self):
        if self.k < 3:
            raise ValueError(f"RunConfig: k must be >= 3, got {self.k}")
        if self.iterations < 1:
            raise ValueError(f"RunConfig: iterations must be >= 1, got {self.iterations}")
        if self.lr <= 0.0:
            raise ValueError(f"RunConfig: lr must be > 0, got {self.lr}")
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise ValueError(
                f"RunConfig: loss weights must be >= 0, got "
                f"lambda1={self.lambda1} lambda2={self.lambda2}")
        if self.batch < 1:
            raise ValueError(f"RunConfig: batch must be >= 1, got {self.batch}")
        if self.epochs < 1:
            raise ValueError(f"RunConfig: epochs must be >= 1, got {self.epochs}")
        if self.tau <= 0.0:
            raise ValueError(f"RunConfig: tau must be > 0, got {self.tau}")
        if self.diameter <= 0.0:
            raise ValueError(f"RunConfig: diameter must be > 0, got {self.diameter}")
        if self.threads < 1:
            raise ValueError(f"RunConfig: threads must be >= 1, got {self.threads}")
        if self.patience < 0:
            raise ValueError(f"RunConfig: patience must be >= 0, got {self.patience}")


_RUN_TYPES = get_type_hints(RunConfig)
_UNET_TYPES = get_type_hints(UNetConfig)


def _convert(key: str, value: str, typ):
    try:
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ is str:
            return value
    except ValueError:
        raise ValueError(f"config: bad value for {key!r}: {value!r} (expected {typ.__name__})")
    raise ValueError(f"config: unsupported field type for {key!r}")


def parse_kv_text(text: str) -> Dict[str, str]:
    """Flat key=value lines; blank lines and # comments ignored."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def config_from_text(text: str) -> RunConfig:
    return config_from_mapping(parse_kv_text(text))


def config_from_mapping(kv: Dict[str, str]) -> RunConfig:
    run_kwargs = {}
    unet_kwargs = {}
    for key, value in kv.items():
        if key.startswith("unet."):
            name = key[len("unet."):]
            if name not in _UNET_TYPES:
                raise ValueError(f"config: unknown key {key!r}")
            unet_kwargs[name] = _convert(key, value, _UNET_TYPES[name])
        else:
            if key not in _RUN_TYPES or key == "unet":
                raise ValueError(f"config: unknown key {key!r}")
            run_kwargs[key] = _convert(key, value, _RUN_TYPES[key])
    return RunConfig(unet=UNetConfig(**unet_kwargs), **run_kwargs)


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        if f.name == "unet":
            continue
        lines.append(f"{f.name}={getattr(cfg, f.name)}")
    for f in dataclasses.fields(UNetConfig):
        lines.append(f"unet.{f.name}={getattr(cfg.unet, f.name)}")
    return "\n".join(lines) + "\n"
