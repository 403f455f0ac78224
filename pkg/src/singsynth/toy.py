"""Synthetic singing corpus: scores, audio and exact phoneme labels.

Audio is a formant-filtered harmonic source at the note pitch with a light
vibrato, preceded by a class-dependent consonant for syllables that have an
initial. All phoneme boundaries sit on the hop grid, so label frame counts
are integers and the mel of a sliced utterance has exactly as many frames
as its labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .evaluation.features import HOP, SAMPLE_RATE, write_wav
from .frontend.lexicon import INITIAL, REST, SIL, default_lexicon, phonemize, split_tone
from .frontend.score import midi_to_hz, score_to_musicxml

# Tempos at which an eighth note is a whole number of 12.5 ms hops.
GRID_TEMPOS = (80.0, 96.0, 100.0, 120.0, 150.0)
DIVISIONS = 480
EIGHTH = DIVISIONS // 2

DEFAULT_FORMANTS: dict[str, tuple[float, float, float]] = {
    "a": (800.0, 1200.0, 2500.0),
    "o": (500.0, 850.0, 2400.0),
    "e": (550.0, 1500.0, 2500.0),
    "i": (300.0, 2300.0, 3000.0),
    "u": (320.0, 750.0, 2300.0),
    "v": (300.0, 1900.0, 2500.0),
    "ii": (380.0, 1400.0, 2600.0),
}

DEFAULT_LYRICS = (
    "ma1", "la2", "ba3", "da4", "ni3", "wo3", "li4", "shan1", "mi2", "na4",
    "hao3", "tian1", "yi1", "xiao3", "xing1", "a1", "fei1", "ge1", "lu4", "si1",
)

# Consonant classes: (base length in seconds, kind).
_CONSONANTS = {
    **{c: (0.05, "stop") for c in ("b", "d", "g", "p", "t", "k")},
    **{c: (0.1, "fricative") for c in ("f", "s", "sh", "x", "h", "c", "ch", "q", "z", "zh", "j")},
    **{c: (0.075, "sonorant") for c in ("m", "n", "l", "r")},
}
_NOISE_BANDS = {"f": (1000, 5000), "h": (800, 4000), "s": (4000, 10000), "x": (3000, 9000),
                "sh": (2500, 7000)}


def vowel_class(final: str) -> str:
    """Coarse vowel colour of a final, used to look up formants."""
    if final in ("ii", "iii"):
        return "ii"
    for v in ("a", "o", "e"):
        if v in final:
            return v
    return final[0] if final[0] in "iuv" else "a"


@dataclass(frozen=True)
class ToyCorpusSpec:
    num_songs: int = 8
    notes_per_song: int = 8
    tempos: tuple[float, ...] = GRID_TEMPOS
    pitch_range: tuple[int, int] = (55, 69)  # G3..A4
    formants: dict = field(default_factory=lambda: dict(DEFAULT_FORMANTS))
    lyrics: tuple[str, ...] = DEFAULT_LYRICS
    vibrato_cents: float = 15.0
    vibrato_hz: float = 5.5
    seed: int = 0
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP

    def __post_init__(self):
        hop_sec = self.hop / self.sample_rate
        for t in self.tempos:
            eighth = 30.0 / t / hop_sec
            if abs(eighth - round(eighth)) > 1e-9:
                raise ValueError(f"tempo {t} does not put an eighth note on the hop grid")
        if self.notes_per_song < 2:
            raise ValueError("notes_per_song must be at least 2")
        lo, hi = self.pitch_range
        if lo > hi:
            raise ValueError("empty pitch range")


@dataclass(frozen=True)
class ToyNote:
    midi: int | None
    eighths: int
    lyric: str = ""


@dataclass(frozen=True)
class ToySong:
    name: str
    tempo_bpm: float
    notes: tuple[ToyNote, ...]


def plan_songs(spec: ToyCorpusSpec) -> list[ToySong]:
    """Draw songs: two phrases split by a long rest; some carry a short interior rest."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.pitch_range
    songs = []
    for i in range(spec.num_songs):
        tempo = float(spec.tempos[i % len(spec.tempos)])
        half = spec.notes_per_song // 2
        notes: list[ToyNote] = []
        for j in range(spec.notes_per_song):
            if j == half:
                # Four eighths is at least 0.8 s at every grid tempo: a phrase break.
                notes.append(ToyNote(None, 4))
            if j == 2 and i % 3 == 2:
                notes.append(ToyNote(None, 1))
            midi = int(rng.integers(lo, hi + 1))
            if i == 0 and j == 0:
                midi = 69  # guarantee one A4 for tracker cross-checks
            lyric = spec.lyrics[int(rng.integers(len(spec.lyrics)))]
            notes.append(ToyNote(midi, int(rng.integers(1, 4)), lyric))
        songs.append(ToySong(f"song_{i:03d}", tempo, tuple(notes)))
    return songs


@dataclass(frozen=True)
class Label:
    start_frame: int
    end_frame: int
    phoneme: str


def song_labels(song: ToySong, spec: ToyCorpusSpec) -> list[Label]:
    """Frame-exact phoneme labels; each syllable's labels tile its note."""
    hop_sec = spec.hop / spec.sample_rate
    eighth = round(30.0 / song.tempo_bpm / hop_sec)
    lexicon = default_lexicon()
    out: list[Label] = []
    pos = 0
    for note in song.notes:
        frames = note.eighths * eighth
        if note.midi is None:
            out.append(Label(pos, pos + frames, REST if note.eighths >= 4 else SIL))
        else:
            pinyin, tone = split_tone(note.lyric)
            phones = phonemize(pinyin, tone, lexicon)
            if phones[0][1] == INITIAL:
                base = _CONSONANTS.get(phones[0][0], (0.075, "sonorant"))[0]
                n_init = max(1, min(round(base / hop_sec), int(0.3 * frames)))
                out.append(Label(pos, pos + n_init, phones[0][0]))
                out.append(Label(pos + n_init, pos + frames, phones[1][0]))
            else:
                out.append(Label(pos, pos + frames, phones[0][0]))
        pos += frames
    return out


def _harmonics(f0_track: np.ndarray, formants, sr: int, phase0: float, max_hz: float = 5000.0):
    """Formant-weighted harmonic series along an instantaneous-frequency track."""
    phase = phase0 + 2.0 * np.pi * np.cumsum(f0_track) / sr
    f0 = float(np.mean(f0_track))
    wave = np.zeros_like(f0_track)
    for k in range(1, int(max_hz // f0) + 1):
        fk = k * f0
        gain = sum(1.0 / (1.0 + ((fk - fm) / (60.0 + 0.06 * fm)) ** 2) for fm in formants) / k
        wave += gain * np.sin(k * phase)
    return wave, float(phase[-1]) if len(phase) else phase0


def _ramp(n: int, sr: int, ms: float = 8.0) -> np.ndarray:
    env = np.ones(n)
    r = min(n // 2, int(sr * ms / 1000))
    if r:
        w = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = w
        env[n - r:] = w[::-1]
    return env


def render_song(song: ToySong, labels: list[Label], spec: ToyCorpusSpec, rng: np.random.Generator) -> np.ndarray:
    sr, hop = spec.sample_rate, spec.hop
    audio = np.zeros(labels[-1].end_frame * hop)
    phase = 0.0
    it = iter(labels)
    for note in song.notes:
        lab = next(it)
        if note.midi is None:
            continue
        f0 = midi_to_hz(note.midi)
        pinyin, tone = split_tone(note.lyric)
        phones = phonemize(pinyin, tone)
        if phones[0][1] == INITIAL:
            cons = lab
            lab = next(it)
            _render_consonant(audio, cons, f0, spec, rng)
        final = phones[-1][0]
        a, b = lab.start_frame * hop, lab.end_frame * hop
        t = np.arange(b - a) / sr
        track = f0 * 2.0 ** (spec.vibrato_cents / 1200.0 * np.sin(2 * np.pi * spec.vibrato_hz * t))
        wave, phase = _harmonics(track, spec.formants[vowel_class(final)], sr, phase)
        wave *= 0.45 / max(np.max(np.abs(wave)), 1e-9)
        audio[a:b] += wave * _ramp(b - a, sr)
    return audio


def _render_consonant(audio: np.ndarray, lab: Label, f0: float, spec: ToyCorpusSpec, rng) -> None:
    sr, hop = spec.sample_rate, spec.hop
    a, b = lab.start_frame * hop, lab.end_frame * hop
    n = b - a
    _, kind = _CONSONANTS.get(lab.phoneme, (0.075, "sonorant"))
    if kind == "sonorant":
        # Nasal-like murmur: two low harmonics.
        t = np.arange(n) / sr
        wave = 0.12 * np.sin(2 * np.pi * f0 * t) + 0.04 * np.sin(4 * np.pi * f0 * t)
    else:
        lo, hi = _NOISE_BANDS.get(lab.phoneme, (1500, 6000))
        sos = signal.butter(4, [lo, min(hi, 0.45 * sr)], btype="bandpass", fs=sr, output="sos")
        wave = signal.sosfilt(sos, rng.standard_normal(n))
        wave *= 0.15 / max(np.max(np.abs(wave)), 1e-9)
        if kind == "stop":
            wave *= np.exp(-np.arange(n) / (0.01 * sr))
    audio[a:b] += wave * _ramp(n, sr, 4.0)


def write_labels(path: str | Path, labels: list[Label], hop_sec: float) -> None:
    lines = [f"{l.start_frame * hop_sec:.6f}\t{l.end_frame * hop_sec:.6f}\t{l.phoneme}" for l in labels]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_labels(path: str | Path, hop_sec: float) -> list[Label]:
    """Parse ``start<TAB>end<TAB>phoneme`` lines (seconds) onto the frame grid."""
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{n}: expected 3 tab-separated fields")
        s, e = float(parts[0]) / hop_sec, float(parts[1]) / hop_sec
        out.append(Label(int(math.floor(s + 0.5)), int(math.floor(e + 0.5)), parts[2]))
    return out


def gen_toy_corpus(spec: ToyCorpusSpec, out_dir: str | Path) -> list[str]:
    """Write ``<song>.xml``, ``<song>.wav`` and ``<song>.lab`` per song; return song names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hop_sec = spec.hop / spec.sample_rate
    names = []
    for k, song in enumerate(plan_songs(spec)):
        labels = song_labels(song, spec)
        rng = np.random.default_rng([spec.seed, k])
        audio = render_song(song, labels, spec, rng)
        xml = score_to_musicxml(
            [(n.midi, n.eighths * EIGHTH, n.lyric) for n in song.notes], song.tempo_bpm, DIVISIONS, title=song.name
        )
        (out / f"{song.name}.xml").write_text(xml, encoding="utf-8")
        write_wav(out / f"{song.name}.wav", audio, spec.sample_rate)
        write_labels(out / f"{song.name}.lab", labels, hop_sec)
        names.append(song.name)
    return names
