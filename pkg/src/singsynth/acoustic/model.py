"""Duration-allocated encoder / GMM-attention / autoregressive decoder acoustic model."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .. import bstf
from ..evaluation.alignment import AttentionTrace
from ..frontend import PITCH_VOCAB, AcousticInput, Vocab
from .attention import GMMAttention, GMMAttentionState
from .layers import CBHG, ConvPreNet, Downsample, PostNet


@dataclass
class AcousticConfig:
    """Layer sizes and switches. Defaults are a full-size model; toy configs shrink them."""

    num_phonemes: int = field(default_factory=lambda: Vocab.from_lexicon().num_phonemes)
    pitch_vocab: int = PITCH_VOCAB
    num_tones: int = 5
    ph_embed_dim: int = 256
    pi_embed_dim: int = 64
    tone_embed_dim: int = 16
    prenet_conv_kernels: tuple[int, ...] = (5, 5, 3)
    prenet_conv_channels: int = 256
    cbhg_bank_size: int = 8
    cbhg_bank_channels: int = 128
    cbhg_proj_channels: int = 256
    cbhg_highway_layers: int = 4
    cbhg_gru_size: int = 128
    downsample_factor: int = 1
    num_mixtures: int = 5
    attention_variant: str = "v2"
    sigma_min: float = 0.5
    reduction: int = 2
    decoder_prenet: tuple[int, ...] = (256, 256)
    decoder_dropout: float = 0.5
    decoder_rnn_size: int = 512
    postnet_layers: int = 5
    postnet_channels: int = 512
    postnet_kernel: int = 5
    mel_dim: int = 80
    use_tone: bool = False
    use_attention: bool = True
    learning_rate: float = 1e-3
    batch_size: int = 16
    steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.prenet_conv_kernels = tuple(self.prenet_conv_kernels)
        self.decoder_prenet = tuple(self.decoder_prenet)
        if self.reduction < 1 or self.num_mixtures < 1 or self.downsample_factor < 1:
            raise ValueError("reduction, num_mixtures and downsample_factor must be >= 1")
        if self.attention_variant != "v2":
            raise ValueError(f"unsupported attention variant {self.attention_variant!r}")

    @property
    def input_dim(self) -> int:
        return self.ph_embed_dim + self.pi_embed_dim + 3 + (self.tone_embed_dim if self.use_tone else 0)

    @property
    def memory_dim(self) -> int:
        return 2 * self.cbhg_gru_size


@dataclass
class DecoderState:
    att_h: torch.Tensor
    att_c: torch.Tensor
    dec_h: torch.Tensor
    dec_c: torch.Tensor
    context: torch.Tensor
    attention: GMMAttentionState


class AcousticModel(nn.Module):
    def __init__(self, config: AcousticConfig):
        super().__init__()
        c = self.config = config
        self.ph_embedding = nn.Embedding(c.num_phonemes, c.ph_embed_dim)
        self.pi_embedding = nn.Embedding(c.pitch_vocab, c.pi_embed_dim)
        self.tone_embedding = nn.Embedding(c.num_tones, c.tone_embed_dim) if c.use_tone else None
        self.conv_prenet = ConvPreNet(c.input_dim, c.prenet_conv_channels, c.prenet_conv_kernels)
        self.cbhg = CBHG(c.prenet_conv_channels, c.cbhg_bank_size, c.cbhg_bank_channels, c.cbhg_proj_channels,
                         c.cbhg_highway_layers, c.cbhg_gru_size)
        self.downsample = Downsample(c.memory_dim, c.downsample_factor)

        sizes = (c.reduction * c.mel_dim,) + c.decoder_prenet
        self.decoder_prenet = nn.ModuleList(nn.Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))
        self.attention_rnn = nn.LSTMCell(sizes[-1] + c.memory_dim, c.decoder_rnn_size)
        self.attention = GMMAttention(c.decoder_rnn_size, c.num_mixtures, c.reduction / c.downsample_factor,
                                      c.sigma_min)
        self.decoder_rnn = nn.LSTMCell(c.decoder_rnn_size + c.memory_dim, c.decoder_rnn_size)
        self.projection = nn.Linear(c.decoder_rnn_size + c.memory_dim, c.reduction * c.mel_dim)
        self.postnet = PostNet(c.mel_dim, c.postnet_channels, c.postnet_layers, c.postnet_kernel)
        self.register_buffer("mel_mean", torch.zeros(c.mel_dim))
        self.register_buffer("mel_std", torch.ones(c.mel_dim))

    # ---- encoder -------------------------------------------------------

    def embed(self, ids: torch.Tensor, po: torch.Tensor) -> torch.Tensor:
        """``ids`` (B, T, 3) = (ph, pi, tone); ``po`` (B, T, 3) -> (B, T, input_dim)."""
        c = self.config
        for col, size, name in ((0, c.num_phonemes, "phoneme"), (1, c.pitch_vocab, "pitch"), (2, c.num_tones, "tone")):
            v = ids[..., col]
            if v.numel() and (int(v.min()) < 0 or int(v.max()) >= size):
                raise IndexError(f"{name} id out of range [0, {size})")
        parts = [self.ph_embedding(ids[..., 0]), self.pi_embedding(ids[..., 1]), po.to(self.mel_mean.dtype)]
        if self.tone_embedding is not None:
            parts.append(self.tone_embedding(ids[..., 2]))
        return torch.cat(parts, dim=-1)

    def encode(self, frames: torch.Tensor, lengths: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Embedded frames (B, T, input_dim) -> memory (B, ceil(T/ds), memory_dim) and its lengths."""
        b, t, _ = frames.shape
        if t == 0:
            raise ValueError("cannot encode an empty sequence")
        if lengths is None:
            lengths = torch.full((b,), t, dtype=torch.long)
        h = self.cbhg(self.conv_prenet(frames.transpose(1, 2)), lengths)
        ds = self.config.downsample_factor
        return self.downsample(h), (lengths + ds - 1) // ds

    # ---- decoder -------------------------------------------------------

    def initial_state(self, memory: torch.Tensor) -> DecoderState:
        b, dtype = memory.shape[0], memory.dtype
        zeros = lambda n: torch.zeros(b, n, dtype=dtype)
        n = self.config.decoder_rnn_size
        return DecoderState(zeros(n), zeros(n), zeros(n), zeros(n), zeros(self.config.memory_dim),
                            self.attention.initial_state(b, dtype))

    def decoder_step(
        self,
        prev_frames: torch.Tensor,
        state: DecoderState,
        memory: torch.Tensor,
        memory_lengths: torch.Tensor,
    ) -> tuple[torch.Tensor, DecoderState, torch.Tensor, dict[str, torch.Tensor]]:
        """One decoder step on normalised frames.

        ``prev_frames`` (B, r, mel_dim) are the previous step's frames (zeros
        at step 0). Returns the next r frames, the new state, the attention
        row and mixture parameters. Pre-net dropout is always active.
        """
        c = self.config
        x = prev_frames.reshape(prev_frames.shape[0], -1)
        for layer in self.decoder_prenet:
            x = F.dropout(F.relu(layer(x)), p=c.decoder_dropout, training=True)
        att_h, att_c = self.attention_rnn(torch.cat([x, state.context], -1), (state.att_h, state.att_c))
        step = state.attention.step
        if c.use_attention:
            context, alpha, att_state, params = self.attention(att_h, state.attention, memory, memory_lengths)
        else:
            context, alpha, params = self._hard_context(step, memory, memory_lengths)
            att_state = GMMAttentionState(params["kappa"], step + 1)
        dec_h, dec_c = self.decoder_rnn(torch.cat([att_h, context], -1), (state.dec_h, state.dec_c))
        out = self.projection(torch.cat([dec_h, context], -1)).reshape(-1, c.reduction, c.mel_dim)
        return out, DecoderState(att_h, att_c, dec_h, dec_c, context, att_state), alpha, params

    def _hard_context(self, step: int, memory: torch.Tensor, memory_lengths: torch.Tensor):
        """Duration-only alignment: memory row ``floor(step * r / ds)``, clamped to the end."""
        b, length, _ = memory.shape
        pos = torch.clamp(torch.full((b,), step * self.config.reduction // self.config.downsample_factor),
                          max=memory_lengths - 1)
        alpha = F.one_hot(pos, length).to(memory.dtype)
        context = memory[torch.arange(b), pos]
        m = self.config.num_mixtures
        kappa = pos.to(memory.dtype)[:, None].expand(b, m)
        params = {"kappa": kappa, "sigma": torch.zeros_like(kappa), "weights": torch.full_like(kappa, 1.0 / m)}
        return context, alpha, params

    def decode(
        self,
        memory: torch.Tensor,
        memory_lengths: torch.Tensor,
        num_frames: int,
        targets: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, list[torch.Tensor], list[dict[str, torch.Tensor]]]:
        """Run ``ceil(num_frames / r)`` steps; teacher-forced when ``targets`` (normalised) is given.

        Returns normalised pre-postnet frames (B, steps * r, mel_dim).
        """
        c = self.config
        steps = math.ceil(num_frames / c.reduction)
        b = memory.shape[0]
        if targets is not None:
            pad = steps * c.reduction - targets.shape[1]
            targets = F.pad(targets, (0, 0, 0, pad)) if pad > 0 else targets[:, : steps * c.reduction]
        state = self.initial_state(memory)
        prev = torch.zeros(b, c.reduction, c.mel_dim, dtype=memory.dtype)
        outputs, alphas, params = [], [], []
        for t in range(steps):
            out, state, alpha, p = self.decoder_step(prev, state, memory, memory_lengths)
            if not torch.isfinite(out).all():
                raise FloatingPointError(f"non-finite decoder output at step {t}")
            outputs.append(out)
            alphas.append(alpha)
            params.append(p)
            prev = targets[:, t * c.reduction:(t + 1) * c.reduction] if targets is not None else out
        return torch.cat(outputs, dim=1), alphas, params

    # ---- whole model ---------------------------------------------------

    def normalize(self, mel: torch.Tensor) -> torch.Tensor:
        return (mel - self.mel_mean) / self.mel_std

    def denormalize(self, mel: torch.Tensor) -> torch.Tensor:
        return mel * self.mel_std + self.mel_mean

    def forward(
        self,
        ids: torch.Tensor,
        po: torch.Tensor,
        lengths: torch.Tensor | None = None,
        target_mel: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, list[torch.Tensor], list[dict[str, torch.Tensor]]]:
        """Returns ``(pre_mel, post_mel, alphas, params)`` in log-mel units, length T."""
        t = ids.shape[1]
        memory, mem_lengths = self.encode(self.embed(ids, po), lengths)
        targets = self.normalize(target_mel) if target_mel is not None else None
        pre, alphas, params = self.decode(memory, mem_lengths, t, targets)
        pre = pre[:, :t]
        post = pre + self.postnet(pre)
        return self.denormalize(pre), self.denormalize(post), alphas, params

    def synthesize(self, x: AcousticInput) -> tuple[np.ndarray, AttentionTrace]:
        """Free-running inference for one utterance: mel (T, mel_dim) and the attention trace."""
        ids = torch.as_tensor(x.ids(), dtype=torch.long)[None]
        po = torch.as_tensor(x.po, dtype=self.mel_mean.dtype)[None]
        with torch.no_grad():
            _, post, alphas, params = self.forward(ids, po)
        trace = AttentionTrace(
            alphas=torch.cat(alphas).double().numpy(),
            kappa=torch.cat([p["kappa"] for p in params]).double().numpy(),
            sigma=torch.cat([p["sigma"] for p in params]).double().numpy(),
            weights=torch.cat([p["weights"] for p in params]).double().numpy(),
        )
        return post[0].double().numpy(), trace


def acoustic_loss(
    pre_mel: torch.Tensor, post_mel: torch.Tensor, target_mel: torch.Tensor, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """``MSE(pre, target) + MSE(post, target)``, averaged over (masked) elements."""
    if pre_mel.shape != target_mel.shape or post_mel.shape != target_mel.shape:
        raise ValueError(f"shape mismatch: {pre_mel.shape}, {post_mel.shape}, {target_mel.shape}")
    if mask is None:
        return F.mse_loss(pre_mel, target_mel) + F.mse_loss(post_mel, target_mel)
    m = mask[..., None].to(pre_mel.dtype).expand_as(pre_mel)
    denom = m.sum().clamp_min(1.0)
    return (((pre_mel - target_mel) ** 2 * m).sum() + ((post_mel - target_mel) ** 2 * m).sum()) / denom


@dataclass
class AcousticBundle:
    """A trained model plus its loss curve, with checkpoint I/O."""

    model: AcousticModel
    losses: list[float] = field(default_factory=list)

    @property
    def config(self) -> AcousticConfig:
        return self.model.config

    def save(self, path: str | Path, config_echo: dict | None = None) -> None:
        tensors = {k: v.detach().cpu().numpy() for k, v in self.model.state_dict().items()}
        bstf.save_checkpoint(path, tensors, {"acoustic": asdict(self.config), **(config_echo or {})},
                             {"losses": self.losses})

    @classmethod
    def load(cls, path: str | Path, expected_config: dict | None = None) -> "AcousticBundle":
        tensors, echo, extra = bstf.load_checkpoint(path, expected_config)
        model = AcousticModel(AcousticConfig(**echo["acoustic"]))
        model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        return cls(model, list(extra.get("losses", [])))

    def synthesize(self, x: AcousticInput) -> tuple[np.ndarray, AttentionTrace]:
        return self.model.synthesize(x)
