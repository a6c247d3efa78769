"""Split backbone features into per-factor features plus a shared multi-head residual."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, ValidationError

FACTORS = ("luminance", "contrast", "structure")


@dataclass
class AdapterConfig:
    dim: int = 32
    head_count: int = 4
    # "shared": the mean of all heads is added to every factor.
    # "per_factor": head i feeds factor i only (head_count must equal the factor count).
    head_mode: str = "shared"
    extra_factors: list[str] = field(default_factory=list)
    shared_decoder: bool = False

    def __post_init__(self):
        if self.dim < 1 or self.head_count < 1:
            raise ConfigError("adapter dim and head_count must be >= 1")
        if self.head_mode not in ("shared", "per_factor"):
            raise ConfigError(f"unknown head_mode {self.head_mode!r}")
        if self.head_mode == "per_factor" and self.head_count != len(self.factor_names):
            raise ConfigError("per_factor head_mode needs one head per factor")
        if len(set(self.factor_names)) != len(self.factor_names):
            raise ConfigError("duplicate factor names")

    @property
    def factor_names(self) -> tuple[str, ...]:
        return FACTORS + tuple(self.extra_factors)


@dataclass
class QualityFactorFeatures:
    tensors: dict[str, torch.Tensor]  # factor -> batch x H x W x D

    @property
    def factor_names(self) -> list[str]:
        return list(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]


class QualityAdapter(nn.Module):
    """Bias-free pointwise maps, so the whole adapter is linear in its input.

    ``factor_weights`` has shape (factors, D, C); ``head_weights`` (heads, D, C).
    """

    def __init__(self, in_channels: int, config: AdapterConfig):
        super().__init__()
        self.in_channels = in_channels
        self.dim = config.dim
        self.head_mode = config.head_mode
        self.factor_names = config.factor_names
        std = 1.0 / math.sqrt(in_channels)
        self.factor_weights = nn.Parameter(torch.randn(len(self.factor_names), config.dim, in_channels) * std)
        self.head_weights = nn.Parameter(torch.randn(config.head_count, config.dim, in_channels) * std)

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        if x.shape[-1] != self.in_channels:
            raise ValidationError(f"adapter expects {self.in_channels} channels, got {x.shape[-1]}")
        own = torch.einsum("bhwc,fdc->fbhwd", x, self.factor_weights)
        heads = torch.einsum("bhwc,kdc->kbhwd", x, self.head_weights)
        if self.head_mode == "shared":
            residual = heads.mean(dim=0)
            return {name: own[i] + residual for i, name in enumerate(self.factor_names)}
        return {name: own[i] + heads[i] for i, name in enumerate(self.factor_names)}


def decompose_factors(features, adapter: QualityAdapter) -> QualityFactorFeatures:
    """Channel-last features (B x H x W x C, or a FeatureTensor) -> per-factor B x H x W x D."""
    data = getattr(features, "data", features)
    return QualityFactorFeatures(adapter(data))
