"""Audio I/O and feature extraction: log-mel spectrograms and YIN F0 tracks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

SAMPLE_RATE = 24000
HOP = 300
WIN = 1200
N_FFT = 2048
N_MELS = 80
FMIN, FMAX = 0.0, 12000.0
LOG_FLOOR = -10.0

F0_MIN, F0_MAX = 50.0, 1500.0
YIN_THRESHOLD = 0.15
YIN_WINDOW = 600


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(
    sr: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX
) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``, unit peak."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def num_frames(num_samples: int, hop: int = HOP) -> int:
    return math.ceil(num_samples / hop)


def _centered_frames(wave: np.ndarray, size: int, hop: int) -> np.ndarray:
    """Frames of ``size`` samples centred on ``t * hop``, zero-padded at both ends."""
    count = num_frames(len(wave), hop)
    half = size // 2
    padded = np.zeros(half + count * hop + size, dtype=np.float64)
    padded[half:half + len(wave)] = wave
    view = np.lib.stride_tricks.sliding_window_view(padded, size)
    return view[::hop][:count]


def extract_mel(wave: np.ndarray) -> np.ndarray:
    """Natural-log mel power, shape ``(ceil(len / 300), 80)``, floored at -10.

    Hann window of 1200 samples centred in a 2048-point FFT, hop 300.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1 or wave.size == 0:
        raise ValueError("extract_mel needs a non-empty mono signal")
    frames = _centered_frames(wave, N_FFT, HOP)
    window = np.zeros(N_FFT)
    offset = (N_FFT - WIN) // 2
    window[offset:offset + WIN] = get_window("hann", WIN)
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    mel = power @ mel_filterbank().T
    return np.log(np.maximum(mel, math.exp(LOG_FLOOR)))


@dataclass(frozen=True)
class F0Track:
    """Per-frame voicing and F0 in Hz (NaN on unvoiced frames)."""

    voiced: np.ndarray
    f0_hz: np.ndarray

    def __post_init__(self):
        if self.voiced.shape != self.f0_hz.shape:
            raise ValueError("voiced and f0_hz must have equal shapes")

    def __len__(self) -> int:
        return len(self.voiced)

    @classmethod
    def from_hz(cls, f0_hz) -> "F0Track":
        """Build from an array where values <= 0 or NaN mean unvoiced."""
        f0 = np.asarray(f0_hz, dtype=np.float64)
        voiced = np.isfinite(f0) & (f0 > 0)
        return cls(voiced, np.where(voiced, f0, np.nan))


def extract_f0(
    wave: np.ndarray,
    sr: int = SAMPLE_RATE,
    hop: int = HOP,
    fmin: float = F0_MIN,
    fmax: float = F0_MAX,
    threshold: float = YIN_THRESHOLD,
) -> F0Track:
    """YIN pitch tracker on frames aligned with :func:`extract_mel`.

    Uses the cumulative-mean-normalised difference function; the first lag
    whose value dips under ``threshold`` is refined to its local minimum and
    then by parabolic interpolation. Frames with no such dip are unvoiced.
    """
    wave = np.asarray(wave, dtype=np.float64)
    tau_min = max(2, int(sr / fmax))
    tau_max = int(math.ceil(sr / fmin))
    w = max(YIN_WINDOW, tau_max)
    frames = _centered_frames(wave, w + tau_max + 1, hop)
    if frames.shape[0] == 0:
        return F0Track(np.zeros(0, bool), np.zeros(0))

    diff = _difference(frames, w, tau_max)
    cum = np.cumsum(diff[:, 1:], axis=1)
    lags = np.arange(1, tau_max + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd = np.where(cum > 0, diff[:, 1:] * lags / cum, 1.0)
    cmnd = np.concatenate([np.ones((len(cmnd), 1)), cmnd], axis=1)

    energy = np.mean(frames[:, :w] ** 2, axis=1)
    f0 = np.full(len(frames), np.nan)
    for t in range(len(frames)):
        if energy[t] < 1e-10:
            continue
        d = cmnd[t]
        below = np.nonzero(d[tau_min:tau_max] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 < tau_max and d[tau + 1] < d[tau]:
            tau += 1
        shift = 0.0
        if 1 <= tau < tau_max:
            a, b, c = d[tau - 1], d[tau], d[tau + 1]
            denom = a - 2 * b + c
            if denom > 0:
                shift = 0.5 * (a - c) / denom
        hz = sr / (tau + shift)
        if fmin <= hz <= fmax:
            f0[t] = hz
    return F0Track.from_hz(f0)


def _difference(frames: np.ndarray, w: int, tau_max: int) -> np.ndarray:
    """YIN difference d(tau) for tau = 0..tau_max, computed per frame via FFT."""
    n = frames.shape[1]
    size = 1 << (n + w).bit_length()
    head = frames[:, :w]
    corr = np.fft.irfft(
        np.fft.rfft(frames, size, axis=1) * np.conj(np.fft.rfft(head, size, axis=1)), size, axis=1
    )[:, : tau_max + 1]
    sq = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(tau_max + 1)
    e0 = sq[:, w:w + 1]
    e_tau = sq[:, lags + w] - sq[:, lags]
    return np.maximum(e0 + e_tau - 2.0 * corr, 0.0)


# --------------------------------------------------------------------------
# WAV files


def quantize_pcm16(wave: np.ndarray) -> np.ndarray:
    """Floats in [-1, 1] to signed 16-bit PCM with clipping."""
    return np.clip(np.round(np.asarray(wave, dtype=np.float64) * 32768.0), -32768, 32767).astype(np.int16)


def write_wav(path: str | Path, wave: np.ndarray, sr: int = SAMPLE_RATE) -> None:
    """Mono 16-bit PCM RIFF file."""
    wavfile.write(str(path), sr, quantize_pcm16(wave))


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Return float samples in [-1, 1) and the sample rate (first channel only)."""
    sr, data = wavfile.read(str(path))
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0, sr
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2.0 ** 31, sr
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0, sr
    return data.astype(np.float64), sr
