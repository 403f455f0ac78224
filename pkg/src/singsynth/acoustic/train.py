"""Teacher-forced training for the acoustic model."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import torch
from torch.nn.utils.rnn import pad_sequence

from ..frontend import AcousticInput
from .model import AcousticBundle, AcousticConfig, AcousticModel, acoustic_loss

log = logging.getLogger(__name__)


def collate(items: Sequence[tuple[AcousticInput, np.ndarray]]):
    """Pad a list of ``(inputs, target mel)`` into batch tensors plus a frame mask."""
    ids = [torch.as_tensor(x.ids(), dtype=torch.long) for x, _ in items]
    po = [torch.as_tensor(x.po, dtype=torch.float32) for x, _ in items]
    mel = [torch.as_tensor(np.asarray(m), dtype=torch.float32) for _, m in items]
    for (x, m) in items:
        if x.num_frames != len(m):
            raise ValueError(f"inputs have {x.num_frames} frames but target has {len(m)}")
    lengths = torch.tensor([len(i) for i in ids])
    mask = torch.arange(int(lengths.max()))[None, :] < lengths[:, None]
    return (pad_sequence(ids, batch_first=True), pad_sequence(po, batch_first=True),
            pad_sequence(mel, batch_first=True), lengths, mask)


def teacher_forced_loss(model: AcousticModel, items, per_term: bool = False):
    """Dual loss on a batch with ground-truth decoder inputs (no gradient)."""
    ids, po, mel, lengths, mask = collate(items)
    with torch.no_grad():
        pre, post, alphas, _ = model(ids, po, lengths, mel)
        if per_term:
            m = mask[..., None].expand_as(pre).float()
            n = m.sum()
            return float((((pre - mel) ** 2) * m).sum() / n), float((((post - mel) ** 2) * m).sum() / n)
        return float(acoustic_loss(pre, post, mel, mask))


def train_acoustic(
    data: Sequence[tuple[AcousticInput, np.ndarray]],
    config: AcousticConfig,
    steps: int | None = None,
    log_every: int = 50,
) -> AcousticBundle:
    """Fit the acoustic model with teacher forcing on ``(inputs, log-mel)`` pairs."""
    if not data:
        raise ValueError("empty acoustic dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = AcousticModel(config)
    allmel = np.concatenate([np.asarray(m) for _, m in data])
    model.mel_mean.copy_(torch.as_tensor(allmel.mean(0)))
    model.mel_std.copy_(torch.as_tensor(np.maximum(allmel.std(0), 1e-2)))
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    total = config.steps if steps is None else steps
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(total, 1), eta_min=config.learning_rate * 0.05)
    losses: list[float] = []
    for step in range(total):
        pick = rng.choice(len(data), size=min(config.batch_size, len(data)), replace=False)
        ids, po, mel, lengths, mask = collate([data[i] for i in pick])
        pre, post, _, _ = model(ids, po, lengths, mel)
        loss = acoustic_loss(pre, post, mel, mask)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite acoustic loss at step {step}")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        sched.step()
        losses.append(float(loss.detach()))
        if log_every and step % log_every == 0:
            log.info("acoustic step %d loss %.4f", step, losses[-1])
    return AcousticBundle(model, losses)
