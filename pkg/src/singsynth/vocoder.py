"""Mel-conditioned WaveRNN vocoder with a coarse/fine dual softmax.

Each 16-bit sample is split into a high byte (coarse) and low byte (fine).
A single GRU reads the previous coarse and fine values; the frame-level
condition, encoded by dilated GLU conv blocks and repeated ``hop`` times,
enters as an additive term on the GRU's input-side biases. The coarse
softmax reads the hidden state; the fine softmax reads the hidden state plus
an embedding of the coarse value just drawn.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import expit
from torch import nn

from . import bstf

log = logging.getLogger(__name__)

SQRT_HALF = math.sqrt(0.5)
N_CLASSES = 256
OFFSET = 32768


# --------------------------------------------------------------------------
# Sample quantisation


def split_sample(s):
    """16-bit unsigned sample(s) -> ``(coarse, fine)``; works on scalars and arrays."""
    arr = np.asarray(s)
    if arr.dtype.kind not in "iu" or np.any(arr < 0) or np.any(arr > 65535):
        raise ValueError("samples must be integers in [0, 65535]")
    coarse, fine = np.divmod(arr.astype(np.int64), 256)
    if arr.ndim == 0:
        return int(coarse), int(fine)
    return coarse, fine


def combine_sample(coarse, fine):
    """Inverse of :func:`split_sample`: ``coarse * 256 + fine``."""
    c, f = np.asarray(coarse), np.asarray(fine)
    for name, v in (("coarse", c), ("fine", f)):
        if v.dtype.kind not in "iu" or np.any(v < 0) or np.any(v > 255):
            raise ValueError(f"{name} must be integers in [0, 255]")
    out = c.astype(np.int64) * 256 + f.astype(np.int64)
    return int(out) if out.ndim == 0 else out


def quantize_audio(wave: np.ndarray) -> np.ndarray:
    """Floats in [-1, 1] to unsigned 16-bit integers (offset binary)."""
    return np.clip(np.round(np.asarray(wave, dtype=np.float64) * OFFSET) + OFFSET, 0, 65535).astype(np.int64)


def dequantize_audio(samples: np.ndarray) -> np.ndarray:
    """Unsigned 16-bit integers to floats in [-1, 1)."""
    return (np.asarray(samples, dtype=np.float64) - OFFSET) / OFFSET


def _scale(v):
    """Byte value to [-1, 1] network input."""
    return v / 127.5 - 1.0


# --------------------------------------------------------------------------
# Network


@dataclass
class VocoderConfig:
    gru_size: int = 512
    num_conv_blocks: int = 6
    conv_kernel: int = 3
    condition_channels: int = 128
    hop: int = 300
    coarse_bits: int = 8
    fine_bits: int = 8
    mel_dim: int = 80
    head_size: int = 256
    coarse_embed: int = 32
    # Input gains: one coarse step must be visible to the GRU without
    # waiting for Adam to grow the input weights.
    coarse_input_gain: float = 16.0
    fine_input_gain: float = 4.0
    learning_rate: float = 1e-3
    batch_size: int = 8
    seq_frames: int = 8
    steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.coarse_bits != 8 or self.fine_bits != 8:
            raise ValueError("only the 8+8 bit split is supported")
        if self.conv_kernel % 2 != 1:
            raise ValueError("conv_kernel must be odd for symmetric padding")

    @property
    def dilations(self) -> list[int]:
        return [2 ** i for i in range(self.num_conv_blocks)]

    @property
    def receptive_field(self) -> int:
        return 1 + (self.conv_kernel - 1) * sum(self.dilations)


class ConvBlock(nn.Module):
    """``y = (x + GLU(conv(x))) * sqrt(0.5)`` with a non-causal dilated conv."""

    def __init__(self, channels: int, kernel: int, dilation: int):
        super().__init__()
        self.conv = nn.Conv1d(channels, 2 * channels, kernel, dilation=dilation, padding=dilation * (kernel - 1) // 2)
        with torch.no_grad():
            # Gate half starts at zero, so sigmoid gives 0.5 everywhere.
            self.conv.weight[channels:].zero_()
            self.conv.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: (B, C, T)."""
        return (x + F.glu(self.conv(x), dim=1)) * SQRT_HALF


class ConditionNet(nn.Module):
    def __init__(self, config: VocoderConfig):
        super().__init__()
        self.proj = nn.Conv1d(config.mel_dim, config.condition_channels, 1)
        self.blocks = nn.ModuleList(
            ConvBlock(config.condition_channels, config.conv_kernel, d) for d in config.dilations
        )
        self.register_buffer("mel_mean", torch.zeros(()))
        self.register_buffer("mel_std", torch.ones(()))

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """``mel``: (B, T, mel_dim) -> (B, T, C)."""
        x = self.proj(((mel - self.mel_mean) / self.mel_std).transpose(1, 2))
        for block in self.blocks:
            x = block(x)
        return x.transpose(1, 2)


class WaveRNN(nn.Module):
    def __init__(self, config: VocoderConfig):
        super().__init__()
        self.config = config
        h = config.gru_size
        self.condition = ConditionNet(config)
        self.gru = nn.GRU(2 + config.condition_channels, h, batch_first=True)
        self.coarse_hidden = nn.Linear(h, config.head_size)
        self.coarse_out = nn.Linear(config.head_size, N_CLASSES)
        self.coarse_embedding = nn.Embedding(N_CLASSES, config.coarse_embed)
        self.fine_hidden = nn.Linear(h + config.coarse_embed, config.head_size)
        self.fine_out = nn.Linear(config.head_size, N_CLASSES)
        for layer in (self.coarse_out, self.fine_out):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    # The GRU's input weights split into the sample part and the condition
    # part; W_cond @ cond is the additive bias term the condition provides.
    def _split_input_weights(self):
        w = self.gru.weight_ih_l0
        return w[:, :2], w[:, 2:]

    def condition_bias(self, mel: torch.Tensor) -> torch.Tensor:
        """Frame-rate gate biases, (B, T, 3H)."""
        _, w_cond = self._split_input_weights()
        return self.condition(mel) @ w_cond.T + self.gru.bias_ih_l0

    def heads(self, hidden: torch.Tensor, coarse: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Coarse logits from ``hidden``; fine logits given the current ``coarse``."""
        c_logits = self.coarse_out(F.relu(self.coarse_hidden(hidden)))
        f_in = torch.cat([hidden, self.coarse_embedding(coarse)], dim=-1)
        f_logits = self.fine_out(F.relu(self.fine_hidden(f_in)))
        return c_logits, f_logits

    def sample_inputs(self, prev_coarse: torch.Tensor, prev_fine: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """GRU input rows ``[scaled prev coarse, scaled prev fine, condition]``."""
        gc, gf = self.config.coarse_input_gain, self.config.fine_input_gain
        return torch.cat(
            [gc * _scale(prev_coarse.to(cond.dtype))[..., None], gf * _scale(prev_fine.to(cond.dtype))[..., None],
             cond], -1
        )

    def forward(
        self, mel: torch.Tensor, prev_coarse: torch.Tensor, prev_fine: torch.Tensor, coarse: torch.Tensor,
        frame_offset: int = 0, h0: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Teacher-forced logits for a span of samples.

        ``mel`` covers the whole utterance (B, T, mel_dim); the sample tensors
        (B, N) start at sample ``frame_offset * hop``.
        """
        hop = self.config.hop
        n = prev_coarse.shape[1]
        cond = self.condition(mel)
        first = frame_offset
        last = frame_offset + math.ceil(n / hop)
        cond = upsample_condition(cond[:, first:last], hop)[:, :n]
        hidden, _ = self.gru(self.sample_inputs(prev_coarse, prev_fine, cond), h0)
        return self.heads(hidden, coarse)


def upsample_condition(cond, hop: int):
    """Repeat each frame ``hop`` times along the time axis (axis -2)."""
    if isinstance(cond, torch.Tensor):
        return torch.repeat_interleave(cond, hop, dim=-2)
    return np.repeat(np.asarray(cond), hop, axis=-2)


def gru_cell(gi: torch.Tensor, h: torch.Tensor, w_hh: torch.Tensor, b_hh: torch.Tensor) -> torch.Tensor:
    """One GRU update given the precomputed input-side term ``gi`` (incl. biases)."""
    gh = h @ w_hh.T + b_hh
    i_r, i_z, i_n = gi.chunk(3, -1)
    h_r, h_z, h_n = gh.chunk(3, -1)
    r = torch.sigmoid(i_r + h_r)
    z = torch.sigmoid(i_z + h_z)
    n = torch.tanh(i_n + r * h_n)
    return (1 - z) * n + z * h


@dataclass
class SampleState:
    hidden: np.ndarray
    coarse: int = 128
    fine: int = 0

    def __post_init__(self):
        if not (0 <= self.coarse <= 255 and 0 <= self.fine <= 255):
            raise ValueError("coarse and fine must lie in [0, 255]")


def wavernn_step(
    model: WaveRNN,
    h: torch.Tensor,
    prev_coarse: torch.Tensor,
    prev_fine: torch.Tensor,
    cond_bias: torch.Tensor,
    coarse: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Differentiable single step: returns ``(coarse_logits, fine_logits, new_h)``.

    ``cond_bias`` is one row of :meth:`WaveRNN.condition_bias`; ``coarse``
    is the coarse value the fine head is conditioned on.
    """
    w_sample, _ = model._split_input_weights()
    gc, gf = model.config.coarse_input_gain, model.config.fine_input_gain
    x = torch.stack([gc * _scale(prev_coarse.to(h.dtype)), gf * _scale(prev_fine.to(h.dtype))], -1)
    gi = x @ w_sample.T + cond_bias
    h = gru_cell(gi, h, model.gru.weight_hh_l0, model.gru.bias_hh_l0)
    c_logits, f_logits = model.heads(h, coarse)
    return c_logits, f_logits, h


def step_distributions(
    model: WaveRNN, state: SampleState, cond_bias_row: np.ndarray, coarse: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, SampleState]:
    """One generation step returning both 256-way distributions and the new state.

    The fine distribution is conditioned on ``coarse`` if given, else on a
    coarse value drawn from the coarse distribution with ``rng`` (argmax if
    ``rng`` is None).
    """
    with torch.no_grad():
        h = torch.as_tensor(state.hidden, dtype=torch.float32)[None]
        w_sample, _ = model._split_input_weights()
        cfg = model.config
        x = torch.tensor([[cfg.coarse_input_gain * _scale(state.coarse), cfg.fine_input_gain * _scale(state.fine)]],
                         dtype=torch.float32)
        gi = x @ w_sample.T + torch.as_tensor(cond_bias_row, dtype=torch.float32)[None]
        h = gru_cell(gi, h, model.gru.weight_hh_l0, model.gru.bias_hh_l0)
        c_logits = model.coarse_out(F.relu(model.coarse_hidden(h)))
        p_c = torch.softmax(c_logits.double(), -1)[0].numpy()
        if coarse is None:
            coarse = _draw(p_c, rng)
        _, f_logits = model.heads(h, torch.tensor([coarse]))
        p_f = torch.softmax(f_logits.double(), -1)[0].numpy()
        fine = _draw(p_f, rng)
    return p_c, p_f, SampleState(h[0].numpy(), int(coarse), int(fine))


def _draw(p: np.ndarray, rng: np.random.Generator | None) -> int:
    if rng is None:
        return int(np.argmax(p))
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, len(p) - 1)


# --------------------------------------------------------------------------
# Model wrapper: persistence, training, generation


@dataclass
class Vocoder:
    net: WaveRNN
    losses: list[float] = field(default_factory=list)

    @property
    def config(self) -> VocoderConfig:
        return self.net.config

    def save(self, path: str | Path, config_echo: dict | None = None) -> None:
        tensors = {k: v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}
        bstf.save_checkpoint(path, tensors, {"vocoder": asdict(self.config), **(config_echo or {})},
                             {"losses": self.losses})

    @classmethod
    def load(cls, path: str | Path, expected_config: dict | None = None) -> "Vocoder":
        tensors, echo, extra = bstf.load_checkpoint(path, expected_config)
        net = WaveRNN(VocoderConfig(**echo["vocoder"]))
        net.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        return cls(net, list(extra.get("losses", [])))

    def generate(self, mel: np.ndarray, mode: str = "sample", seed: int = 0) -> np.ndarray:
        """Waveform of exactly ``T * hop`` floats in [-1, 1)."""
        return generate(mel, self, mode, seed)


def vocoder_loss(c_logits, f_logits, coarse, fine) -> torch.Tensor:
    """Summed coarse + fine cross-entropy, in nats per sample."""
    return F.cross_entropy(c_logits.reshape(-1, N_CLASSES), coarse.reshape(-1)) + F.cross_entropy(
        f_logits.reshape(-1, N_CLASSES), fine.reshape(-1)
    )


def _prepare_pair(mel: np.ndarray, samples: np.ndarray, hop: int):
    mel = np.asarray(mel, dtype=np.float32)
    samples = np.asarray(samples)
    expected = len(mel) * hop
    if abs(len(samples) - expected) > hop:
        raise ValueError(f"mel/audio mismatch: {len(mel)} frames vs {len(samples)} samples (hop {hop})")
    if len(samples) < expected:
        samples = np.concatenate([samples, np.full(expected - len(samples), OFFSET)])
    samples = samples[:expected].astype(np.int64)
    coarse, fine = np.divmod(samples, 256)
    prev_c = np.concatenate([[OFFSET // 256], coarse[:-1]])
    prev_f = np.concatenate([[0], fine[:-1]])
    return mel, coarse, fine, prev_c, prev_f


def teacher_forced_loss(vocoder: Vocoder, mel: np.ndarray, samples: np.ndarray) -> float:
    """Mean nats/sample over a whole utterance with ground-truth history."""
    mel, c, f, pc, pf = _prepare_pair(mel, samples, vocoder.config.hop)
    t = lambda a: torch.as_tensor(a)[None]
    with torch.no_grad():
        cl, fl = vocoder.net(torch.as_tensor(mel)[None], t(pc), t(pf), t(c))
        # float64 reduction: a float32 mean over many samples drifts by ~1e-6
        return float(vocoder_loss(cl.double(), fl.double(), t(c), t(f)))


def mel_statistics(mels: Sequence[np.ndarray]) -> tuple[float, float]:
    allv = np.concatenate([np.asarray(m).ravel() for m in mels])
    return float(allv.mean()), float(max(allv.std(), 1e-3))


def train_vocoder(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    config: VocoderConfig,
    steps: int | None = None,
    log_every: int = 100,
) -> Vocoder:
    """Fit the vocoder on ``(mel, uint16 samples)`` pairs with random crops.

    Every step draws ``batch_size`` crops of ``seq_frames`` frames; the
    condition network sees every frame within its receptive field of the
    crop, so crops get their true context. Loss is the summed coarse and fine cross-entropy.
    """
    if not pairs:
        raise ValueError("empty vocoder dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    net = WaveRNN(config)
    mean, std = mel_statistics([m for m, _ in pairs])
    net.condition.mel_mean.fill_(mean)
    net.condition.mel_std.fill_(std)
    data = [_prepare_pair(m, s, config.hop) for m, s in pairs]
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    hop, span = config.hop, config.seq_frames
    margin = config.receptive_field // 2
    losses: list[float] = []
    total = config.steps if steps is None else steps
    for step in range(total):
        picks = rng.integers(len(data), size=config.batch_size)
        xs, cs, fs, cur = [], [], [], []
        for k in picks:
            mel, c, f, pc, pf = data[k]
            n = min(span, len(mel))
            start = int(rng.integers(len(mel) - n + 1))
            sl = slice(start * hop, (start + n) * hop)
            # Frames beyond the receptive field cannot reach the crop, so
            # conditioning a margin-padded window is exact and much cheaper.
            lo, hi = max(0, start - margin), min(len(mel), start + n + margin)
            cond = net.condition(torch.as_tensor(mel[lo:hi])[None])[0, start - lo:start - lo + n]
            xs.append(net.sample_inputs(torch.as_tensor(pc[sl]), torch.as_tensor(pf[sl]),
                                        upsample_condition(cond, hop)))
            cs.append(torch.as_tensor(c[sl]))
            fs.append(torch.as_tensor(f[sl]))
        # An utterance shorter than seq_frames shortens the whole batch.
        m = min(len(x) for x in xs)
        x = torch.stack([x[:m] for x in xs])
        c_t = torch.stack([c[:m] for c in cs])
        f_t = torch.stack([f[:m] for f in fs])
        hidden, _ = net.gru(x)
        cl, fl = net.heads(hidden, c_t)
        loss = vocoder_loss(cl, fl, c_t, f_t)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite vocoder loss at step {step}")
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(net.parameters(), 1.0)
        opt.step()
        losses.append(float(loss.detach()))
        if log_every and step % log_every == 0:
            log.info("vocoder step %d loss %.4f", step, losses[-1])
    return Vocoder(net, losses)


def generate(mel: np.ndarray, vocoder: Vocoder, mode: str = "sample", seed: int = 0) -> np.ndarray:
    """Autoregressive generation of ``T * hop`` samples.

    ``mode`` is ``"sample"`` (draw from both softmaxes with a seeded RNG) or
    ``"argmax"``. The loop runs in numpy on float64 copies of the weights.
    """
    if mode not in ("sample", "argmax"):
        raise ValueError(f"unknown mode {mode!r}")
    net = vocoder.net
    hop = vocoder.config.hop
    mel = np.asarray(mel, dtype=np.float32)
    if mel.ndim != 2 or mel.shape[1] != vocoder.config.mel_dim:
        raise ValueError(f"mel must be (T, {vocoder.config.mel_dim})")
    with torch.no_grad():
        cond = net.condition_bias(torch.as_tensor(mel)[None])[0].double().numpy()
    p = {k: v.detach().double().numpy() for k, v in net.named_parameters()}
    w_s = p["gru.weight_ih_l0"][:, :2] * [vocoder.config.coarse_input_gain, vocoder.config.fine_input_gain]
    w_hh, b_hh = p["gru.weight_hh_l0"], p["gru.bias_hh_l0"]
    ch_w, ch_b = p["coarse_hidden.weight"], p["coarse_hidden.bias"]
    co_w, co_b = p["coarse_out.weight"], p["coarse_out.bias"]
    emb = p["coarse_embedding.weight"]
    hs = vocoder.config.gru_size
    fh_wh, fh_we, fh_b = p["fine_hidden.weight"][:, :hs], p["fine_hidden.weight"][:, hs:], p["fine_hidden.bias"]
    fo_w, fo_b = p["fine_out.weight"], p["fine_out.bias"]
    fine_emb = emb @ fh_we.T + fh_b  # (256, head) precomputed per coarse value

    rng = np.random.default_rng(seed) if mode == "sample" else None
    total = len(mel) * hop
    out = np.empty(total, dtype=np.int64)
    h = np.zeros(hs)
    c, f = OFFSET // 256, 0
    for n in range(total):
        gi = w_s[:, 0] * _scale(c) + w_s[:, 1] * _scale(f) + cond[n // hop]
        gh = w_hh @ h + b_hh
        r = expit(gi[:hs] + gh[:hs])
        z = expit(gi[hs:2 * hs] + gh[hs:2 * hs])
        cand = np.tanh(gi[2 * hs:] + r * gh[2 * hs:])
        h = (1.0 - z) * cand + z * h
        logits = co_w @ np.maximum(ch_w @ h + ch_b, 0.0) + co_b
        c = _pick(logits, rng)
        logits = fo_w @ np.maximum(fh_wh @ h + fine_emb[c], 0.0) + fo_b
        f = _pick(logits, rng)
        if not np.isfinite(h).all():
            raise FloatingPointError(f"non-finite vocoder state at sample {n}")
        out[n] = c * 256 + f
    return dequantize_audio(out)


def _pick(logits: np.ndarray, rng: np.random.Generator | None) -> int:
    if rng is None:
        return int(np.argmax(logits))
    e = np.exp(logits - logits.max())
    cdf = np.cumsum(e)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), N_CLASSES - 1)
