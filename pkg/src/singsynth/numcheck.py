"""Central-difference gradient checks for torch modules in float64."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np
import torch


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``|a - n| / max(|a| + |n|, floor)`` over the flattened block (2-norms)."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), floor))


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    eps: float = 1e-6,
    max_entries: int | None = 24,
    seed: int = 0,
) -> dict[str, float]:
    """Relative error between autograd and central differences, per parameter block.

    ``loss_fn`` must be deterministic (reseed any dropout inside it). For
    blocks larger than ``max_entries`` a seeded random subset of entries is
    probed; ``None`` probes every entry.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    out = {}
    with torch.no_grad():
        for (name, p), g in zip(params.items(), grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and len(idx) > max_entries:
                idx = rng.choice(len(idx), size=max_entries, replace=False)
            numeric = np.empty(len(idx))
            for k, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                numeric[k] = (up - down) / (2 * eps)
            out[name] = relative_error(g.reshape(-1)[idx].numpy(), numeric)
    return out
