"""Feature extraction and objective evaluation."""

from .alignment import AlignmentSummary, AttentionTrace, alignment_diagnostics
from .features import (
    HOP,
    LOG_FLOOR,
    N_MELS,
    SAMPLE_RATE,
    F0Track,
    extract_f0,
    extract_mel,
    hz_to_mel,
    mel_filterbank,
    mel_to_hz,
    num_frames,
    read_wav,
    write_wav,
)
from .metrics import MetricReport, compare, evaluate_waves, f0_corr, f0_rmse, msd

__all__ = [name for name in dir() if not name.startswith("_")]
