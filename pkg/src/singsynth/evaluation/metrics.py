"""Objective distortion metrics between reference and synthesised audio."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .features import F0Track, extract_f0, extract_mel

DB_PER_NEPER_POWER = 10.0 / math.log(10.0)


def msd(mel_a: np.ndarray, mel_b: np.ndarray) -> float:
    """Mel-spectral distortion in dB.

    Both inputs are natural-log mel power of equal shape ``(T, D)``. Each is
    converted to dB and the per-frame Euclidean distances are averaged:
    ``mean_t sqrt(sum_d (a_td - b_td)^2)``. There is no time warping.
    """
    a = np.asarray(mel_a, dtype=np.float64)
    b = np.asarray(mel_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"msd needs equal (T, D) shapes, got {a.shape} and {b.shape}")
    if a.shape[0] == 0:
        raise ValueError("msd of empty spectrograms")
    diff = DB_PER_NEPER_POWER * (a - b)
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


def _overlap(a: F0Track, b: F0Track) -> np.ndarray:
    if len(a) != len(b):
        raise ValueError(f"F0 tracks differ in length: {len(a)} vs {len(b)}")
    return a.voiced & b.voiced


def f0_rmse(a: F0Track, b: F0Track) -> float | None:
    """RMSE in Hz over frames voiced in both tracks; None when none overlap."""
    both = _overlap(a, b)
    if not both.any():
        return None
    d = a.f0_hz[both] - b.f0_hz[both]
    return float(np.sqrt(np.mean(d * d)))


def f0_corr(a: F0Track, b: F0Track) -> float | None:
    """Pearson correlation over mutually voiced frames.

    None when fewer than two frames overlap or either side is constant.
    """
    both = _overlap(a, b)
    if both.sum() < 2:
        return None
    x = a.f0_hz[both] - a.f0_hz[both].mean()
    y = b.f0_hz[both] - b.f0_hz[both].mean()
    denom = math.sqrt(float(x @ x) * float(y @ y))
    if denom == 0.0:
        return None
    return float(np.clip((x @ y) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class MetricReport:
    msd_db: float
    f0_rmse_hz: float | None
    f0_corr: float | None
    voiced_overlap_frames: int
    frames: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def format(self) -> str:
        def fmt(v):
            return "absent" if v is None else f"{v:.4f}"

        return (
            f"msd_db={fmt(self.msd_db)} f0_rmse_hz={fmt(self.f0_rmse_hz)} "
            f"f0_corr={fmt(self.f0_corr)} voiced_overlap_frames={self.voiced_overlap_frames} frames={self.frames}"
        )


def compare(mel_a, mel_b, f0_a: F0Track | None = None, f0_b: F0Track | None = None) -> MetricReport:
    """Metric report for already-extracted features."""
    if f0_a is None or f0_b is None:
        return MetricReport(msd(mel_a, mel_b), None, None, 0, len(mel_a))
    return MetricReport(
        msd_db=msd(mel_a, mel_b),
        f0_rmse_hz=f0_rmse(f0_a, f0_b),
        f0_corr=f0_corr(f0_a, f0_b),
        voiced_overlap_frames=int(_overlap(f0_a, f0_b).sum()),
        frames=len(mel_a),
    )


def evaluate_waves(ref: np.ndarray, hyp: np.ndarray, max_frame_slack: int = 1) -> MetricReport:
    """Re-extract mel and F0 from both waveforms and compare them.

    Lengths may differ by at most ``max_frame_slack`` frames, in which case
    the longer side is truncated; larger mismatches are an error.
    """
    mel_r, mel_h = extract_mel(ref), extract_mel(hyp)
    f0_r, f0_h = extract_f0(ref), extract_f0(hyp)
    n = min(len(mel_r), len(mel_h))
    if abs(len(mel_r) - len(mel_h)) > max_frame_slack:
        raise ValueError(f"frame counts differ by more than {max_frame_slack}: {len(mel_r)} vs {len(mel_h)}")
    return compare(mel_r[:n], mel_h[:n], _cut(f0_r, n), _cut(f0_h, n))


def _cut(track: F0Track, n: int) -> F0Track:
    return F0Track(track.voiced[:n], track.f0_hz[:n])
