"""Frame-level inputs to 80-band log-mel spectrograms."""

from .attention import GMMAttention, GMMAttentionState
from .layers import CBHG, ConvPreNet, Downsample, PostNet
from .model import AcousticBundle, AcousticConfig, AcousticModel, DecoderState, acoustic_loss
from .train import collate, teacher_forced_loss, train_acoustic

__all__ = [name for name in dir() if not name.startswith("_")]
