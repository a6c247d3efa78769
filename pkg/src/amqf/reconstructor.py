"""Single-channel reconstruction branch: factor targets, decoders and the L1 gradient+intensity loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ValidationError

WINDOW = 11
WINDOW_SIGMA = 1.5
STRUCTURE_EPS = 1e-8


@dataclass
class FactorMaps:
    luminance_map: np.ndarray
    contrast_map: np.ndarray
    structure_map: np.ndarray


def gaussian_kernel(size: int = WINDOW, sigma: float = WINDOW_SIGMA, dtype=torch.float64) -> torch.Tensor:
    ax = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(ax ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def local_stats(gray: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Gaussian-windowed mean, std and normalised deviation of B x H x W maps (reflect padding)."""
    k = gaussian_kernel(dtype=gray.dtype).to(gray.device)[None, None]
    pad = WINDOW // 2
    x = gray[:, None]
    mode = "reflect" if min(gray.shape[-2:]) > pad else "replicate"
    mu = F.conv2d(F.pad(x, (pad,) * 4, mode=mode), k)
    ex2 = F.conv2d(F.pad(x * x, (pad,) * 4, mode=mode), k)
    sigma = torch.sqrt(torch.clamp(ex2 - mu * mu, min=0.0))
    structure = (x - mu) / (sigma + STRUCTURE_EPS)
    return mu[:, 0], sigma[:, 0], structure[:, 0]


def gray_batch(images: torch.Tensor) -> torch.Tensor:
    """B x H x W x 3 -> B x H x W (Rec.601)."""
    w = torch.tensor([0.299, 0.587, 0.114], dtype=images.dtype, device=images.device)
    return images @ w


def factor_target_maps(image) -> FactorMaps:
    """Luminance / contrast / structure maps of one image (H x W x 3 colour or H x W gray)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] != 3:
            raise ValidationError(f"expected H x W x 3 or H x W, got {arr.shape}")
        arr = arr @ np.array([0.299, 0.587, 0.114])
    elif arr.ndim != 2:
        raise ValidationError(f"expected H x W x 3 or H x W, got {arr.shape}")
    mu, sigma, s = local_stats(torch.from_numpy(arr)[None])
    return FactorMaps(mu[0].numpy(), sigma[0].numpy(), s[0].numpy())


def factor_targets(images: torch.Tensor) -> dict[str, torch.Tensor]:
    """Batched targets for training: factor name -> B x H x W x 1."""
    mu, sigma, s = local_stats(gray_batch(images))
    return {"luminance": mu[..., None], "contrast": sigma[..., None], "structure": s[..., None]}


class FactorDecoder(nn.Module):
    """Transposed-conv upsampler, D channels -> 1 channel, each stage doubling resolution."""

    def __init__(self, dim: int, upsample_factor: int):
        super().__init__()
        n = int(round(math.log2(upsample_factor)))
        widths = [dim] + [8 * 2 ** (n - 2 - i) for i in range(n - 1)] + [1]
        self.stages = nn.ModuleList(
            nn.ConvTranspose2d(cin, cout, kernel_size=4, stride=2, padding=1)
            for cin, cout in zip(widths[:-1], widths[1:])
        )
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """NCHW in, NCHW out."""
        for i, conv in enumerate(self.stages):
            x = conv(x)
            if i < len(self.stages) - 1:
                x = F.gelu(x)
        return x


def decode_factor(factor_features: torch.Tensor, decoder: FactorDecoder) -> torch.Tensor:
    """B x h x w x D -> B x H x W x 1."""
    if factor_features.ndim != 4 or factor_features.shape[-1] != decoder.dim:
        raise ValidationError(
            f"decoder expects B x h x w x {decoder.dim}, got {tuple(factor_features.shape)}"
        )
    out = decoder(factor_features.permute(0, 3, 1, 2))
    return out.permute(0, 2, 3, 1)


def _forward_diff(x: torch.Tensor, dim: int) -> torch.Tensor:
    # replicate padding at the trailing edge: last difference is zero
    last = x.narrow(dim, x.shape[dim] - 1, 1)
    return torch.cat([x, last], dim=dim).diff(dim=dim)


def reconstruction_loss(i1, i2):
    """Return ``(total, grad_part, intensity_part)``; every term is a mean over pixels."""
    i1 = torch.as_tensor(i1)
    i2 = torch.as_tensor(i2)
    if i1.shape != i2.shape:
        raise ValidationError(f"shape mismatch {tuple(i1.shape)} vs {tuple(i2.shape)}")
    if i1.ndim == 4:
        i1, i2 = i1[..., 0], i2[..., 0]
    if i1.ndim < 2:
        raise ValidationError("images need at least two dimensions")
    intensity = (i1 - i2).abs().mean()
    grad = sum(
        (_forward_diff(i1, d) - _forward_diff(i2, d)).abs().mean()
        for d in (i1.ndim - 2, i1.ndim - 1)
    )
    return grad + intensity, grad, intensity
