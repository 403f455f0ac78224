"""Location-based GMM attention with monotonically advancing means."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class GMMAttentionState:
    kappa: torch.Tensor  # (B, M) mixture means in memory-position units
    step: int = 0


class GMMAttention(nn.Module):
    """Mixture-of-Gaussians attention, normalised over memory positions.

    From the query a linear layer yields per mixture a weight logit, a mean
    increment and a width; ``kappa_t = kappa_{t-1} + softplus(delta)`` so the
    means never move backwards, ``sigma = softplus(.) + sigma_min`` and the
    weights are a softmax. The mixture density is evaluated at each memory
    position and renormalised to sum to one.
    """

    def __init__(self, query_dim: int, num_mixtures: int, step_size: float, sigma_min: float = 0.5,
                 init_sigma: float = 1.5):
        super().__init__()
        self.num_mixtures = num_mixtures
        self.step_size = step_size
        self.sigma_min = sigma_min
        self.proj = nn.Linear(query_dim, 3 * num_mixtures)
        with torch.no_grad():
            self.proj.weight.mul_(0.1)
            m = num_mixtures
            self.proj.bias[:m].zero_()
            self.proj.bias[m:2 * m].fill_(_softplus_inverse(step_size))
            self.proj.bias[2 * m:].fill_(_softplus_inverse(max(init_sigma - sigma_min, 1e-3)))

    def initial_state(self, batch: int, dtype=torch.float32) -> GMMAttentionState:
        # One step behind position 0, so the first default increment lands on it.
        return GMMAttentionState(torch.full((batch, self.num_mixtures), -float(self.step_size), dtype=dtype))

    def forward(
        self,
        query: torch.Tensor,
        state: GMMAttentionState,
        memory: torch.Tensor,
        memory_lengths: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, GMMAttentionState, dict[str, torch.Tensor]]:
        """Returns ``(context (B, D), alpha (B, L), new state, mixture params)``."""
        w_hat, delta_hat, sigma_hat = self.proj(query).chunk(3, dim=-1)
        kappa = state.kappa + F.softplus(delta_hat)
        sigma = F.softplus(sigma_hat) + self.sigma_min
        log_w = F.log_softmax(w_hat, dim=-1)
        positions = torch.arange(memory.shape[1], dtype=memory.dtype, device=memory.device)
        z = (positions[None, None, :] - kappa[..., None]) / sigma[..., None]
        log_density = log_w[..., None] - 0.5 * z * z - torch.log(sigma[..., None]) - 0.5 * math.log(2 * math.pi)
        scores = torch.logsumexp(log_density, dim=1)
        if memory_lengths is not None:
            valid = positions[None, :] < memory_lengths[:, None]
            scores = scores.masked_fill(~valid, float("-inf"))
        alpha = torch.softmax(scores, dim=-1)
        context = torch.bmm(alpha[:, None, :], memory)[:, 0]
        params = {"kappa": kappa, "sigma": sigma, "weights": log_w.exp()}
        return context, alpha, GMMAttentionState(kappa, state.step + 1), params


def _softplus_inverse(y: float) -> float:
    return y + math.log(-math.expm1(-y))
