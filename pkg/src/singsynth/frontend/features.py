"""Phoneme-level (duration model) and frame-level (acoustic model) features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lexicon import PHONEME_TYPES, Lexicon, default_lexicon
from .score import MIDI_LOW, REST_MIDI, UtteranceScore

NUM_PITCHES = 108  # C0..B8
REST_PITCH_ID = NUM_PITCHES
PITCH_VOCAB = NUM_PITCHES + 1
NUM_TONES = 5


class ConfigurationError(RuntimeError):
    """Feature extraction was asked to run without its required statistics."""


@dataclass(frozen=True)
class ZStats:
    mean: float
    std: float

    def apply(self, x: np.ndarray | float):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


@dataclass(frozen=True)
class Vocab:
    """Index tables for phonemes and phoneme types."""

    phonemes: tuple[str, ...]

    @classmethod
    def from_lexicon(cls, lexicon: Lexicon | None = None) -> "Vocab":
        return cls((lexicon or default_lexicon()).phonemes)

    @property
    def ph_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.phonemes)}

    @property
    def num_phonemes(self) -> int:
        return len(self.phonemes)

    @property
    def duration_input_dim(self) -> int:
        return len(self.phonemes) + len(PHONEME_TYPES) + 1


def pitch_id(midi: int) -> int:
    return REST_PITCH_ID if midi == REST_MIDI else midi - MIDI_LOW


def du_stats(utterances: Sequence[UtteranceScore]) -> ZStats:
    """Mean/std of the per-phoneme note duration over a corpus."""
    du = np.array([p.note_duration_sec for u in utterances for p in u.phonemes], dtype=np.float64)
    if du.size == 0:
        raise ValueError("no phonemes to compute statistics from")
    std = float(du.std())
    return ZStats(float(du.mean()), std if std > 1e-8 else 1.0)


def build_duration_inputs(
    utt: UtteranceScore,
    stats: ZStats | None,
    vocab: Vocab | None = None,
    normalize: bool = True,
) -> np.ndarray:
    """Return X_D as a ``(num_phonemes, |Ph| + |Tp| + 1)`` float64 matrix.

    Columns are the phoneme one-hot, the phoneme-type one-hot, then the
    owning note's duration in seconds, z-normalised with ``stats`` unless
    ``normalize`` is false.
    """
    phonemes = utt.phonemes
    if not phonemes:
        raise ValueError(f"utterance {utt.utterance_id!r} has no phonemes")
    if normalize and stats is None:
        raise ConfigurationError("duration normalisation statistics are missing")
    vocab = vocab or Vocab.from_lexicon()
    index = vocab.ph_index
    n_ph, n_tp = vocab.num_phonemes, len(PHONEME_TYPES)
    x = np.zeros((len(phonemes), n_ph + n_tp + 1))
    for row, p in enumerate(phonemes):
        x[row, index[p.ph]] = 1.0
        x[row, n_ph + PHONEME_TYPES.index(p.tp)] = 1.0
        x[row, -1] = stats.apply(p.note_duration_sec) if normalize else p.note_duration_sec
    return x


@dataclass(frozen=True)
class AcousticInput:
    """Frame-level inputs: categorical ids plus the three-channel position ramp."""

    ph_id: np.ndarray  # (T,) int
    pi_id: np.ndarray  # (T,) int
    tone_id: np.ndarray  # (T,) int
    po: np.ndarray  # (T, 3) float: advancement, reserve, utterance position

    @property
    def num_frames(self) -> int:
        return int(self.ph_id.shape[0])

    def ids(self) -> np.ndarray:
        return np.stack([self.ph_id, self.pi_id, self.tone_id], axis=1).astype(np.int32)

    @classmethod
    def from_arrays(cls, ids: np.ndarray, po: np.ndarray) -> "AcousticInput":
        ids = np.asarray(ids)
        return cls(ids[:, 0].astype(np.int64), ids[:, 1].astype(np.int64), ids[:, 2].astype(np.int64),
                   np.asarray(po, dtype=np.float64))


def build_acoustic_inputs(utt: UtteranceScore, vocab: Vocab | None = None) -> AcousticInput:
    """Expand phonemes to frames using their allocated frame counts.

    For frame ``i`` of an ``N``-frame phoneme that is the ``k``-th of ``K``:
    ``po = (i/(N-1), 1 - i/(N-1), k/(K-1))`` with ``N == 1`` giving
    advancement 0 and ``K == 1`` giving position 0.
    """
    vocab = vocab or Vocab.from_lexicon()
    index = vocab.ph_index
    ph, pi, tone, po = [], [], [], []
    flat = [(p, s.note) for s in utt.syllables for p in s.phonemes]
    num = len(flat)
    if num == 0:
        raise ValueError(f"utterance {utt.utterance_id!r} has no phonemes")
    for k, (p, note) in enumerate(flat):
        n = p.allocated_frames
        if n is None or n < 1:
            raise ValueError(f"phoneme {k} ({p.ph}) has allocated_frames={n}; need >= 1")
        adv = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
        pos = k / (num - 1) if num > 1 else 0.0
        ph += [index[p.ph]] * n
        pi += [pitch_id(note.midi_number)] * n
        tone += [p.to] * n
        po.append(np.stack([adv, 1.0 - adv, np.full(n, pos)], axis=1))
    return AcousticInput(np.array(ph), np.array(pi), np.array(tone), np.concatenate(po))
