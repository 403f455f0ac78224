"""Encoder and post-net building blocks."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence


def _same_pad(x: torch.Tensor, kernel: int, dilation: int = 1) -> torch.Tensor:
    total = dilation * (kernel - 1)
    return F.pad(x, (total // 2, total - total // 2))


class SameConv1d(nn.Conv1d):
    """Stride-1 conv whose output length equals its input length (any kernel width)."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return super().forward(_same_pad(x, self.kernel_size[0], self.dilation[0]))


class ConvPreNet(nn.Module):
    """Stacked 1-D convs; every layer after the first is residual."""

    def __init__(self, in_dim: int, channels: int, kernels: tuple[int, ...]):
        super().__init__()
        self.convs = nn.ModuleList(
            SameConv1d(in_dim if i == 0 else channels, channels, k) for i, k in enumerate(kernels)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C_in, T) -> (B, channels, T)."""
        for i, conv in enumerate(self.convs):
            y = F.relu(conv(x))
            x = y if i == 0 else x + y
        return x


class Highway(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.h = nn.Linear(dim, dim)
        self.t = nn.Linear(dim, dim)
        nn.init.constant_(self.t.bias, -1.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        gate = torch.sigmoid(self.t(x))
        return gate * F.relu(self.h(x)) + (1.0 - gate) * x


class CBHG(nn.Module):
    """Conv bank (widths 1..K) -> max-pool -> projections -> highways -> bi-GRU."""

    def __init__(self, dim: int, bank_size: int, bank_channels: int, proj_channels: int,
                 highway_layers: int, gru_size: int):
        super().__init__()
        self.bank = nn.ModuleList(SameConv1d(dim, bank_channels, k) for k in range(1, bank_size + 1))
        self.proj1 = SameConv1d(bank_size * bank_channels, proj_channels, 3)
        self.proj2 = SameConv1d(proj_channels, dim, 3)
        self.highways = nn.ModuleList(Highway(dim) for _ in range(highway_layers))
        self.gru = nn.GRU(dim, gru_size, batch_first=True, bidirectional=True)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """(B, dim, T) -> (B, T, 2 * gru_size); ``lengths`` packs the bi-GRU input."""
        y = torch.cat([F.relu(conv(x)) for conv in self.bank], dim=1)
        y = F.max_pool1d(F.pad(y, (0, 1), mode="replicate"), kernel_size=2, stride=1)
        y = F.relu(self.proj1(y))
        y = self.proj2(y) + x
        y = y.transpose(1, 2)
        for hw in self.highways:
            y = hw(y)
        if lengths is None or bool((lengths == y.shape[1]).all()):
            out, _ = self.gru(y)
            return out
        packed = pack_padded_sequence(y, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.gru(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=y.shape[1])
        return out


class Downsample(nn.Module):
    """Strided conv taking T frames to ceil(T / factor)."""

    def __init__(self, dim: int, factor: int):
        super().__init__()
        self.factor = factor
        self.conv = nn.Conv1d(dim, dim, kernel_size=factor, stride=factor)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, dim) -> (B, ceil(T / factor), dim)."""
        t = x.shape[1]
        pad = -t % self.factor
        y = F.pad(x.transpose(1, 2), (0, pad), mode="replicate") if pad else x.transpose(1, 2)
        return self.conv(y).transpose(1, 2)


class PostNet(nn.Module):
    """Residual conv stack; tanh on all but the last, zero-initialised, layer."""

    def __init__(self, dim: int, channels: int, layers: int, kernel: int):
        super().__init__()
        dims = [dim] + [channels] * (layers - 1) + [dim]
        self.convs = nn.ModuleList(SameConv1d(dims[i], dims[i + 1], kernel) for i in range(layers))
        nn.init.zeros_(self.convs[-1].weight)
        nn.init.zeros_(self.convs[-1].bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Residual for (B, T, dim) input, same shape."""
        y = x.transpose(1, 2)
        for i, conv in enumerate(self.convs):
            y = conv(y)
            if i < len(self.convs) - 1:
                y = torch.tanh(y)
        return y.transpose(1, 2)
