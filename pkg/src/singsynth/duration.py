"""Phoneme duration prediction under note-duration constraints.

A bidirectional multi-layer LSTM regresses log frame counts from X_D. Its
raw predictions are then rescaled so each syllable exactly fills its note,
and quantised to the frame grid with largest-remainder rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence, pad_sequence

from . import bstf
from .frontend import SILENCE, UtteranceScore, ZStats

log = logging.getLogger(__name__)

DEFAULT_HOP_SEC = 0.0125


@dataclass
class DurationModelConfig:
    input_dim: int
    num_layers: int = 2
    hidden_size: int = 128
    target_space: str = "log_frames"
    learning_rate: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 500
    seed: int = 0
    hop_sec: float = DEFAULT_HOP_SEC

    def __post_init__(self):
        if self.hidden_size <= 0 or self.num_layers < 1 or self.input_dim <= 0:
            raise ValueError("duration model sizes must be positive")
        if self.target_space != "log_frames":
            raise ValueError(f"unsupported target space {self.target_space!r}")


class DurationNet(nn.Module):
    def __init__(self, config: DurationModelConfig):
        super().__init__()
        self.config = config
        self.rnn = nn.LSTM(
            config.input_dim,
            config.hidden_size,
            num_layers=config.num_layers,
            bidirectional=True,
            batch_first=True,
        )
        self.out = nn.Linear(2 * config.hidden_size, 1)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """``x``: (B, P, input_dim) -> log-frame predictions (B, P)."""
        if x.shape[-1] != self.config.input_dim:
            raise ValueError(f"expected input_dim {self.config.input_dim}, got {x.shape[-1]}")
        if lengths is None:
            h, _ = self.rnn(x)
        else:
            packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
            h, _ = self.rnn(packed)
            h, _ = pad_packed_sequence(h, batch_first=True, total_length=x.shape[1])
        return self.out(h).squeeze(-1)


@dataclass
class DurationModel:
    """Trained network plus the Du normalisation statistics it was trained with."""

    net: DurationNet
    stats: ZStats
    losses: list[float] = field(default_factory=list)

    @property
    def config(self) -> DurationModelConfig:
        return self.net.config

    def save(self, path: str | Path, config_echo: dict | None = None) -> None:
        tensors = {k: v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}
        echo = {"duration": asdict(self.config), **(config_echo or {})}
        extra = {"du_mean": self.stats.mean, "du_std": self.stats.std, "losses": self.losses}
        bstf.save_checkpoint(path, tensors, echo, extra)

    @classmethod
    def load(cls, path: str | Path, expected_config: dict | None = None) -> "DurationModel":
        tensors, echo, extra = bstf.load_checkpoint(path, expected_config)
        net = DurationNet(DurationModelConfig(**echo["duration"]))
        net.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        return cls(net, ZStats(extra["du_mean"], extra["du_std"]), list(extra.get("losses", [])))


def duration_loss(pred_log: torch.Tensor, target_frames: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked MSE between predicted and target log frame counts."""
    diff = (pred_log - torch.log(target_frames.to(pred_log.dtype))) * mask
    return diff.pow(2).sum() / mask.sum().clamp_min(1)


def _batch(items, dtype=torch.float32):
    xs = [torch.as_tensor(x, dtype=dtype) for x, _, _ in items]
    ys = [torch.as_tensor(y, dtype=dtype) for _, y, _ in items]
    ms = [torch.as_tensor(m, dtype=dtype) for _, _, m in items]
    lengths = torch.tensor([len(x) for x in xs])
    return (
        pad_sequence(xs, batch_first=True),
        pad_sequence(ys, batch_first=True, padding_value=1.0),
        pad_sequence(ms, batch_first=True),
        lengths,
    )


def train_duration(
    dataset: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    config: DurationModelConfig,
    stats: ZStats,
    max_epochs: int | None = None,
) -> DurationModel:
    """Fit the duration network with MSE on log frames.

    Each item is ``(x_d, target_frames, mask)``; ``mask`` is zero on silence
    phonemes, which take their length from the score and are not predicted.
    """
    if not dataset:
        raise ValueError("empty duration dataset")
    for x, y, _ in dataset:
        if np.any(np.asarray(y) < 1):
            raise ValueError("duration targets must be at least one frame")
    torch.manual_seed(config.seed)
    net = DurationNet(config)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    epochs = config.max_epochs if max_epochs is None else max_epochs
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            x, y, m, lengths = _batch([dataset[i] for i in order[start:start + config.batch_size]])
            loss = duration_loss(net(x, lengths), y, m)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite duration loss at epoch {epoch}, batch start {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * float(m.sum())
            count += float(m.sum())
        losses.append(total / max(count, 1.0))
    model = DurationModel(net, stats, losses)
    log.info("duration model trained: %d epochs, final loss %.3g", epochs, losses[-1] if losses else float("nan"))
    return model


def evaluate_duration_loss(model: DurationModel, dataset) -> float:
    """Mean log-frame MSE of ``model`` over ``dataset`` (masked phonemes only)."""
    with torch.no_grad():
        x, y, m, lengths = _batch(dataset)
        return float(duration_loss(model.net(x, lengths), y, m))


def predict_durations(x_d: np.ndarray, model: DurationModel) -> np.ndarray:
    """Per-phoneme raw durations in seconds (strictly positive)."""
    x_d = np.asarray(x_d)
    if x_d.ndim != 2 or x_d.shape[1] != model.config.input_dim:
        raise ValueError(f"X_D must be (P, {model.config.input_dim}), got {x_d.shape}")
    with torch.no_grad():
        pred = model.net(torch.as_tensor(x_d, dtype=torch.float32)[None])[0].double().numpy()
    return np.exp(pred) * model.config.hop_sec


# --------------------------------------------------------------------------
# Post-processing


def _syllable_slices(utt: UtteranceScore):
    start = 0
    for syl in utt.syllables:
        yield syl, slice(start, start + len(syl.phonemes))
        start += len(syl.phonemes)


def constrain_to_notes(raw_sec: Sequence[float], utt: UtteranceScore) -> np.ndarray:
    """Rescale predictions so every syllable lasts exactly as long as its note.

    Within a syllable only the ratio between phonemes survives. Silence
    phonemes take the note duration verbatim; an all-zero syllable is split
    uniformly.
    """
    raw = np.asarray(raw_sec, dtype=np.float64)
    if raw.shape != (len(utt.phonemes),):
        raise ValueError(f"expected {len(utt.phonemes)} durations, got shape {raw.shape}")
    out = np.empty_like(raw)
    for syl, sl in _syllable_slices(utt):
        note = syl.note.duration_sec
        part = raw[sl]
        if len(part) == 1 or syl.phonemes[0].tp == SILENCE:
            out[sl] = note / len(part)
            continue
        total = part.sum()
        if total <= 0:
            log.warning("syllable %r: zero predicted duration, splitting uniformly", syl.pinyin)
            out[sl] = note / len(part)
        else:
            out[sl] = part * (note / total)
    return out


def note_frames(note_sec: float, hop_sec: float = DEFAULT_HOP_SEC) -> int:
    """Frames a note occupies on the hop grid (round half up)."""
    return int(math.floor(note_sec / hop_sec + 0.5 + 1e-9))


def quantize_syllable(seconds: Sequence[float], note_sec: float, hop_sec: float = DEFAULT_HOP_SEC) -> list[int]:
    """Largest-remainder rounding of one syllable onto ``round(note/hop)`` frames.

    Quotas are proportional to ``seconds``; remainders go to the largest
    fractional parts with ties favouring later (vowel) phonemes. Any phoneme
    left at zero takes a frame from its longest sibling. If the note is too
    short for one frame per phoneme, the syllable grows to ``len(seconds)``.
    """
    sec = np.asarray(seconds, dtype=np.float64)
    n = len(sec)
    if hop_sec <= 0:
        raise ValueError("hop_sec must be positive")
    total = note_frames(note_sec, hop_sec)
    if total < n:
        log.info("note of %.4fs too short for %d phonemes; using %d frames", note_sec, n, n)
        total = n
    weight = sec.sum()
    share = sec / weight if weight > 0 else np.full(n, 1.0 / n)
    quota = share * total
    frames = np.floor(quota + 1e-9).astype(int)
    frac = np.round(quota - frames, 9)
    leftover = total - int(frames.sum())
    order = sorted(range(n), key=lambda i: (-frac[i], -i))
    for i in order[:leftover]:
        frames[i] += 1
    for i in range(n):
        if frames[i] == 0:
            donor = max(range(n), key=lambda j: (frames[j], j))
            frames[donor] -= 1
            frames[i] = 1
    return frames.tolist()


def quantize_to_frames(
    constrained_sec: Sequence[float], utt: UtteranceScore, hop_sec: float = DEFAULT_HOP_SEC
) -> np.ndarray:
    """Integer frames per phoneme; each syllable sums to ``round(note/hop)``."""
    sec = np.asarray(constrained_sec, dtype=np.float64)
    frames = np.empty(len(sec), dtype=np.int64)
    for syl, sl in _syllable_slices(utt):
        frames[sl] = quantize_syllable(sec[sl], syl.note.duration_sec, hop_sec)
    return frames


def allocate(utt: UtteranceScore, raw_sec: Sequence[float], hop_sec: float = DEFAULT_HOP_SEC) -> UtteranceScore:
    """Constrain, quantise and attach durations to the utterance's phonemes."""
    sec = constrain_to_notes(raw_sec, utt)
    return utt.with_allocation(sec, quantize_to_frames(sec, utt, hop_sec))
