"""Backbone feature extraction.

Two variants share one topology, a stack of stride-2 3x3 convolutions:
``scratch_cnn`` is randomly initialised and trained with the rest of the
model; ``imported_backbone`` loads exported weights from a tensor archive
(see :mod:`amqf.checkpoint`) and is frozen unless ``trainable`` is set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, ValidationError


@dataclass
class EncoderConfig:
    variant: str = "scratch_cnn"
    out_channels: int = 32
    downsample_factor: int = 8
    trainable: bool | None = None  # None: trainable for scratch, frozen for imported
    weights_path: str | None = None

    def __post_init__(self):
        if self.variant not in ("scratch_cnn", "imported_backbone"):
            raise ConfigError(f"unknown encoder variant {self.variant!r}")
        if self.variant == "imported_backbone" and not self.weights_path:
            raise ConfigError("imported_backbone requires weights_path")
        d = self.downsample_factor
        if d < 2 or d & (d - 1):
            raise ConfigError(f"downsample_factor must be a power of two >= 2, got {d}")
        if self.out_channels < 1:
            raise ConfigError("out_channels must be positive")

    @property
    def is_trainable(self) -> bool:
        if self.trainable is None:
            return self.variant == "scratch_cnn"
        return bool(self.trainable)


@dataclass
class FeatureTensor:
    data: torch.Tensor  # batch x H x W x C
    layer_tag: str


class ConvEncoder(nn.Module):
    """Stride-2 conv stages with GELU between them; the last stage is linear."""

    def __init__(self, widths: list[int], layer_tag: str = "stage_last"):
        super().__init__()
        self.stages = nn.ModuleList(
            nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1)
            for cin, cout in zip(widths[:-1], widths[1:])
        )
        self.layer_tag = layer_tag

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.stages)

    @property
    def out_channels(self) -> int:
        return self.stages[-1].out_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """NCHW in, NCHW out."""
        for i, conv in enumerate(self.stages):
            x = conv(x)
            if i < len(self.stages) - 1:
                x = F.gelu(x)
        return x


def scratch_widths(out_channels: int, downsample_factor: int) -> list[int]:
    n = int(round(math.log2(downsample_factor)))
    return [3] + [16 * 2 ** i for i in range(n - 1)] + [out_channels]


def widths_from_state(state: dict, prefix: str = "stages.") -> list[int]:
    idx = sorted({int(k[len(prefix):].split(".")[0]) for k in state if k.startswith(prefix)})
    if not idx or idx != list(range(len(idx))):
        raise ValidationError("weights archive holds no contiguous conv stages")
    shapes = [tuple(state[f"{prefix}{i}.weight"].shape) for i in idx]
    for a, b in zip(shapes[:-1], shapes[1:]):
        if b[1] != a[0]:
            raise ValidationError(f"stage channel mismatch {a} -> {b}")
    return [shapes[0][1]] + [s[0] for s in shapes]


def export_encoder_weights(encoder: ConvEncoder, path: str | Path) -> None:
    """Write encoder weights in the format ``imported_backbone`` reads."""
    from .checkpoint import write_archive

    tensors = {k: v.detach().cpu().numpy() for k, v in encoder.state_dict().items()}
    write_archive(path, {"kind": "encoder_weights", "layer_tag": encoder.layer_tag}, tensors)


def load_encoder_weights(path: str | Path) -> ConvEncoder:
    from .checkpoint import read_archive

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"encoder weights not found: {path}")
    meta, tensors = read_archive(path)
    enc = ConvEncoder(widths_from_state(tensors), layer_tag=meta.get("layer_tag", "imported"))
    enc.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in tensors.items()})
    return enc


def build_encoder(config: EncoderConfig, state: dict | None = None) -> ConvEncoder:
    """Construct the encoder; ``state`` (name -> array) supplies weights when restoring a checkpoint."""
    if config.variant == "scratch_cnn":
        enc = ConvEncoder(scratch_widths(config.out_channels, config.downsample_factor), "scratch_stage_last")
    elif state is not None:
        enc = ConvEncoder(widths_from_state(state))
    else:
        enc = load_encoder_weights(config.weights_path)
    if enc.out_channels != config.out_channels or enc.downsample_factor != config.downsample_factor:
        raise ConfigError(
            f"encoder produces C={enc.out_channels}, stride {enc.downsample_factor}; config says "
            f"C={config.out_channels}, stride {config.downsample_factor}"
        )
    enc.requires_grad_(config.is_trainable)
    return enc


def extract_features(images, encoder: ConvEncoder) -> FeatureTensor:
    """Run ``encoder`` on a batch of channel-last images (B x H x W x 3).

    Returns channel-last features of shape B x H/d x W/d x C.
    """
    x = torch.as_tensor(images)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ValidationError(f"expected B x H x W x 3 images, got {tuple(x.shape)}")
    d = encoder.downsample_factor
    if x.shape[1] % d or x.shape[2] % d:
        raise ValidationError(f"image size {tuple(x.shape[1:3])} not divisible by {d}")
    x = x.to(next(encoder.parameters()).dtype)
    out = encoder(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
    return FeatureTensor(out, encoder.layer_tag)
