"""Central finite differences, evaluated without autograd.

Used to check analytic gradients; the function under test is called only
inside ``torch.no_grad()``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch


def central_difference(
    fn: Callable[[], torch.Tensor],
    tensors: Sequence[torch.Tensor],
    eps: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return ``(flat_indices, derivatives)`` for each tensor.

    ``fn`` must read the tensors in place. With ``max_entries`` only a random
    subset of each tensor's entries is perturbed.
    """
    rng = np.random.default_rng(seed)
    out = []
    with torch.no_grad():
        for t in tensors:
            flat = t.view(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and idx.size > max_entries:
                idx = np.sort(rng.choice(idx, size=max_entries, replace=False))
            grads = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(fn())
                flat[i] = orig - eps
                down = float(fn())
                flat[i] = orig
                grads[n] = (up - down) / (2 * eps)
            out.append((idx, grads))
    return out


def relative_error(analytic, numeric) -> float:
    """Norm-wise ``|a - n| / max(|a|, |n|)`` (0 when both vanish)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(fn, tensors, eps=1e-6, max_entries=None, seed=0) -> list[float]:
    """Relative error between autograd and central differences, one value per tensor."""
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    value = fn()
    analytic = torch.autograd.grad(value, tensors, allow_unused=True)
    errors = []
    for t, g, (idx, num) in zip(tensors, analytic, central_difference(fn, tensors, eps, max_entries, seed)):
        g = torch.zeros_like(t) if g is None else g
        errors.append(relative_error(g.detach().reshape(-1).numpy()[idx], num))
    return errors
