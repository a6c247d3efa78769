"""Visual-word dictionary: responses, pooling, cosine scoring and the decorrelation penalty.

Every function here is plain tensor arithmetic, so it runs the same with
or without autograd.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import torch

from .errors import ValidationError

NORM_EPS = 1e-12
DECOV_EPS = 1e-6


class DegenerateScoreWarning(RuntimeWarning):
    """A coordinate vector had (near) zero norm; the cosine was set to 0."""


@dataclass
class Dictionary:
    words: torch.Tensor  # N x D
    seed: int

    @property
    def n_words(self) -> int:
        return self.words.shape[0]

    @property
    def dim(self) -> int:
        return self.words.shape[1]


def init_dictionary(n_words: int, dim: int, seed: int, dtype=torch.float32) -> Dictionary:
    """Kaiming-normal words: i.i.d. N(0, 2/dim)."""
    if n_words < 1 or dim < 1:
        raise ValidationError(f"dictionary sizes must be positive, got ({n_words}, {dim})")
    gen = torch.Generator().manual_seed(int(seed))
    words = torch.randn(n_words, dim, generator=gen, dtype=torch.float64) * math.sqrt(2.0 / dim)
    return Dictionary(words.to(dtype), int(seed))


def normalize_features(features: torch.Tensor) -> torch.Tensor:
    """Unit L2 norm along the last axis; zero vectors stay zero."""
    features = torch.as_tensor(features)
    norm = torch.linalg.vector_norm(features, dim=-1, keepdim=True)
    return features / torch.clamp(norm, min=NORM_EPS)


def respond(features: torch.Tensor, words) -> torch.Tensor:
    """Per-location dot product with every word: B x H x W x D -> B x H x W x N."""
    words = getattr(words, "words", words)
    if features.shape[-1] != words.shape[-1]:
        raise ValidationError(f"feature dim {features.shape[-1]} != dictionary dim {words.shape[-1]}")
    return features @ words.transpose(0, 1)


def pool_responses(maps: torch.Tensor) -> torch.Tensor:
    """Spatial average of each word's response map: B x H x W x N -> B x N."""
    return maps.mean(dim=(-3, -2))


def cosine_score(p_ref: torch.Tensor, p_dist: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis; 0 (with a warning) where a norm is below 1e-12."""
    p_ref = torch.as_tensor(p_ref)
    p_dist = torch.as_tensor(p_dist)
    if p_ref.shape != p_dist.shape:
        raise ValidationError(f"length mismatch {tuple(p_ref.shape)} vs {tuple(p_dist.shape)}")
    n_ref = torch.linalg.vector_norm(p_ref, dim=-1)
    n_dist = torch.linalg.vector_norm(p_dist, dim=-1)
    ok = (n_ref >= NORM_EPS) & (n_dist >= NORM_EPS)
    if not bool(ok.all()):
        warnings.warn("zero-norm coordinate vector; cosine score set to 0", DegenerateScoreWarning,
                      stacklevel=2)
    denom = torch.where(ok, n_ref * n_dist, torch.ones_like(n_ref))
    q = (p_ref * p_dist).sum(dim=-1) / denom
    return torch.where(ok, q.clamp(-1.0, 1.0), torch.zeros_like(q))


def decorrelation_loss(samples: torch.Tensor) -> torch.Tensor:
    """Frobenius norm of the population covariance minus its (eps-stabilised) diagonal norm.

    ``samples`` is M x D with M >= 2 observations of D features.
    """
    samples = torch.as_tensor(samples)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValidationError(f"need an M x D sample matrix with M >= 2, got {tuple(samples.shape)}")
    centered = samples - samples.mean(dim=0, keepdim=True)
    cov = centered.transpose(0, 1) @ centered / samples.shape[0]
    frob = torch.sqrt((cov * cov).sum())
    diag = torch.sqrt((torch.diagonal(cov) ** 2).sum() + DECOV_EPS)
    return frob - diag


def fuse_factor_scores(scores: Mapping, weights: Mapping | None = None):
    """Weighted arithmetic mean of per-factor scores (floats or tensors)."""
    if weights is None:
        weights = {k: 1.0 for k in scores}
    if set(weights) != set(scores):
        raise ValidationError(f"weight keys {sorted(weights)} do not match score keys {sorted(scores)}")
    if any(w < 0 for w in weights.values()):
        raise ValidationError("fusion weights must be nonnegative")
    total = sum(weights.values())
    if total <= 0:
        raise ValidationError("fusion weights are all zero")
    return sum(scores[k] * (weights[k] / total) for k in scores)
