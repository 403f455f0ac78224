"""Score data model, MusicXML subset reader and utterance segmentation."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Sequence

from .lexicon import SIL, SILENCE, Lexicon, default_lexicon, lyric_to_pinyin, phonemize

DEFAULT_TEMPO = 120.0
REST_PITCH = "rest"
REST_MIDI = -1
MIDI_LOW, MIDI_HIGH = 12, 119  # C0 .. B8

_NOTE_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
_STEP_SEMITONES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_BEAT_UNITS = {
    "whole": Fraction(4),
    "half": Fraction(2),
    "quarter": Fraction(1),
    "eighth": Fraction(1, 2),
    "16th": Fraction(1, 4),
}


class ScoreError(ValueError):
    """Malformed document or content outside the supported MusicXML subset."""


def midi_to_name(midi: int) -> str:
    return f"{_NOTE_NAMES[midi % 12]}{midi // 12 - 1}"


def name_to_midi(name: str) -> int:
    if name == REST_PITCH:
        return REST_MIDI
    head = name[:2] if len(name) > 2 and name[1] == "#" else name[:1]
    return _NOTE_NAMES.index(head) + 12 * (int(name[len(head):]) + 1)


def midi_to_hz(midi: float) -> float:
    return 440.0 * 2.0 ** ((midi - 69) / 12.0)


@dataclass(frozen=True)
class NoteEvent:
    pitch_name: str
    midi_number: int
    beats: Fraction
    duration_sec: float
    is_rest: bool
    tempo_bpm: float
    onset_sec: float = 0.0

    @classmethod
    def make(cls, midi: int | None, beats: Fraction, tempo_bpm: float, onset_sec: float = 0.0) -> "NoteEvent":
        beats = Fraction(beats)
        if beats <= 0:
            raise ScoreError("note duration must be positive")
        if midi is not None and not MIDI_LOW <= midi <= MIDI_HIGH:
            raise ScoreError(f"pitch {midi} outside C0..B8")
        return cls(
            pitch_name=REST_PITCH if midi is None else midi_to_name(midi),
            midi_number=REST_MIDI if midi is None else midi,
            beats=beats,
            duration_sec=60.0 * float(beats) / tempo_bpm,
            is_rest=midi is None,
            tempo_bpm=float(tempo_bpm),
            onset_sec=onset_sec,
        )


@dataclass(frozen=True)
class PhonemeEvent:
    ph: str
    tp: str
    to: int
    note_duration_sec: float
    allocated_sec: float | None = None
    allocated_frames: int | None = None


@dataclass(frozen=True)
class SyllableEvent:
    pinyin: str
    tone: int
    note: NoteEvent
    phonemes: tuple[PhonemeEvent, ...]

    @property
    def is_rest(self) -> bool:
        return self.note.is_rest


@dataclass(frozen=True)
class MusicScore:
    """Every note of the single part in score order, rests included."""

    syllables: tuple[SyllableEvent, ...]
    tempo_bpm: float
    title: str = ""

    @property
    def notes(self) -> list[NoteEvent]:
        return [s.note for s in self.syllables]


@dataclass(frozen=True)
class UtteranceScore:
    syllables: tuple[SyllableEvent, ...]
    tempo_bpm: float
    utterance_id: str
    start_sec: float = 0.0

    @property
    def phonemes(self) -> list[PhonemeEvent]:
        return [p for s in self.syllables for p in s.phonemes]

    @property
    def total_sec(self) -> float:
        return sum(s.note.duration_sec for s in self.syllables)

    def with_allocation(self, seconds: Sequence[float], frames: Sequence[int]) -> "UtteranceScore":
        """Copy with per-phoneme allocated seconds and frames filled in."""
        if len(seconds) != len(self.phonemes) or len(frames) != len(self.phonemes):
            raise ValueError("allocation length does not match phoneme count")
        it = iter(zip(seconds, frames))
        syllables = []
        for syl in self.syllables:
            phs = []
            for ph in syl.phonemes:
                sec, n = next(it)
                phs.append(replace(ph, allocated_sec=float(sec), allocated_frames=int(n)))
            syllables.append(replace(syl, phonemes=tuple(phs)))
        return replace(self, syllables=tuple(syllables))


def make_syllable(
    note: NoteEvent, pinyin: str = "", tone: int = 0, lexicon: Lexicon | None = None
) -> SyllableEvent:
    if note.is_rest:
        phones = [(SIL, SILENCE)]
        pinyin, tone = "", 0
    else:
        phones = phonemize(pinyin, tone, lexicon)
    return SyllableEvent(
        pinyin=pinyin,
        tone=tone,
        note=note,
        phonemes=tuple(PhonemeEvent(ph, tp, tone, note.duration_sec) for ph, tp in phones),
    )


# --------------------------------------------------------------------------
# MusicXML


def _text(elem: ET.Element | None, default: str | None = None) -> str | None:
    if elem is None or elem.text is None:
        return default
    return elem.text.strip()


def _direction_tempo(elem: ET.Element) -> float | None:
    sound = elem.find(".//sound[@tempo]")
    if sound is not None:
        return float(sound.get("tempo"))
    metronome = elem.find(".//metronome")
    if metronome is not None:
        unit = _BEAT_UNITS.get(_text(metronome.find("beat-unit"), "quarter"))
        per_minute = _text(metronome.find("per-minute"))
        if unit is None or per_minute is None:
            raise ScoreError("unsupported metronome marking")
        if metronome.find("beat-unit-dot") is not None:
            unit = unit * Fraction(3, 2)
        return float(per_minute) * float(unit)
    return None


def parse_musicxml(
    document: bytes | str,
    lexicon: Lexicon | None = None,
    hanzi: dict[str, str] | None = None,
) -> MusicScore:
    """Parse a single-part ``score-partwise`` document.

    Notes must carry ``<pitch>`` or ``<rest/>`` and a ``<duration>`` in
    divisions; sung notes need a ``<lyric>`` holding tone-numbered pinyin (or
    one hanzi found in the hanzi table). Tempo comes from ``<sound tempo>`` or
    a ``<metronome>`` and defaults to 120 BPM. Ties, chords, grace notes and
    multiple voices are rejected.
    """
    lexicon = lexicon or default_lexicon()
    if isinstance(document, str):
        document = document.encode("utf-8")
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ScoreError(f"malformed XML at line {line}, column {col}: {exc}") from None
    if root.tag != "score-partwise":
        raise ScoreError(f"expected score-partwise root, found {root.tag}")
    parts = root.findall("part")
    if len(parts) != 1:
        raise ScoreError(f"expected exactly one part, found {len(parts)}")
    title = _text(root.find("work/work-title")) or _text(root.find("movement-title"), "") or ""

    divisions: int | None = None
    tempo: float | None = None
    first_tempo: float | None = None
    onset = 0.0
    syllables: list[SyllableEvent] = []

    for measure in parts[0].findall("measure"):
        for elem in measure:
            if elem.tag == "attributes":
                div = _text(elem.find("divisions"))
                if div is not None:
                    divisions = int(div)
                    if divisions <= 0:
                        raise ScoreError("divisions must be positive")
            elif elem.tag in ("direction", "sound"):
                found = _direction_tempo(elem) if elem.tag == "direction" else (
                    float(elem.get("tempo")) if elem.get("tempo") else None
                )
                if found is not None:
                    if found <= 0:
                        raise ScoreError("tempo must be positive")
                    tempo = found
            elif elem.tag in ("backup", "forward"):
                raise ScoreError(f"measure {measure.get('number')}: <{elem.tag}> (multiple voices) not supported")
            elif elem.tag == "note":
                syllables.append(_parse_note(elem, measure, divisions, tempo or DEFAULT_TEMPO, onset, lexicon, hanzi))
                onset += syllables[-1].note.duration_sec
                if first_tempo is None:
                    first_tempo = tempo or DEFAULT_TEMPO

    if not syllables:
        raise ScoreError("score contains no notes")
    return MusicScore(tuple(syllables), first_tempo or DEFAULT_TEMPO, title)


def _parse_note(elem, measure, divisions, tempo, onset, lexicon, hanzi) -> SyllableEvent:
    where = f"measure {measure.get('number', '?')}"
    for unsupported in ("grace", "chord", "cue"):
        if elem.find(unsupported) is not None:
            raise ScoreError(f"{where}: <{unsupported}> notes are not supported")
    if elem.find("tie") is not None or elem.find("notations/tied") is not None:
        raise ScoreError(f"{where}: tied notes are not supported")
    if divisions is None:
        raise ScoreError(f"{where}: note before any <divisions>")
    dur = _text(elem.find("duration"))
    if dur is None:
        raise ScoreError(f"{where}: note without <duration>")
    beats = Fraction(int(dur), divisions)

    pitch = elem.find("pitch")
    if elem.find("rest") is not None:
        midi = None
    elif pitch is not None:
        step = _text(pitch.find("step"))
        octave = _text(pitch.find("octave"))
        if step not in _STEP_SEMITONES or octave is None:
            raise ScoreError(f"{where}: bad pitch")
        alter = round(float(_text(pitch.find("alter"), "0")))
        midi = 12 * (int(octave) + 1) + _STEP_SEMITONES[step] + alter
    else:
        raise ScoreError(f"{where}: note has neither pitch nor rest")
    note = NoteEvent.make(midi, beats, tempo, onset)

    if note.is_rest:
        return make_syllable(note)
    text = _text(elem.find("lyric/text"))
    if not text:
        raise ScoreError(f"{where}: sung note {note.pitch_name} has no lyric")
    pinyin, tone = lyric_to_pinyin(text, hanzi)
    return make_syllable(note, pinyin, tone, lexicon)


# --------------------------------------------------------------------------
# Segmentation


def segment_utterances(
    score: MusicScore, rest_threshold_sec: float = 0.5, prefix: str = "utt"
) -> list[UtteranceScore]:
    """Split at rests lasting at least ``rest_threshold_sec``.

    Rests at utterance edges are dropped; shorter interior rests stay as
    ``sil`` syllables. A score holding only rests yields ``[]``.
    """
    if rest_threshold_sec <= 0:
        raise ValueError("rest_threshold_sec must be positive")
    groups: list[list[SyllableEvent]] = [[]]
    for syl in score.syllables:
        if syl.is_rest and syl.note.duration_sec >= rest_threshold_sec:
            groups.append([])
        else:
            groups[-1].append(syl)

    utterances = []
    for group in groups:
        while group and group[0].is_rest:
            group.pop(0)
        while group and group[-1].is_rest:
            group.pop()
        if not group:
            continue
        utterances.append(
            UtteranceScore(
                syllables=tuple(group),
                tempo_bpm=group[0].note.tempo_bpm,
                utterance_id=f"{prefix}_{len(utterances):03d}",
                start_sec=group[0].note.onset_sec,
            )
        )
    return utterances


# --------------------------------------------------------------------------
# Internal JSON score format


def score_to_json(score: MusicScore) -> str:
    def note(n: NoteEvent) -> dict:
        d = asdict(n)
        d["beats"] = [n.beats.numerator, n.beats.denominator]
        return d

    payload = {
        "title": score.title,
        "tempo_bpm": score.tempo_bpm,
        "syllables": [
            {
                "pinyin": s.pinyin,
                "tone": s.tone,
                "note": note(s.note),
                "phonemes": [asdict(p) for p in s.phonemes],
            }
            for s in score.syllables
        ],
    }
    return json.dumps(payload, indent=1, ensure_ascii=False)


def score_from_json(text: str) -> MusicScore:
    payload = json.loads(text)
    syllables = []
    for s in payload["syllables"]:
        nd = dict(s["note"])
        nd["beats"] = Fraction(*nd["beats"])
        syllables.append(
            SyllableEvent(
                pinyin=s["pinyin"],
                tone=s["tone"],
                note=NoteEvent(**nd),
                phonemes=tuple(PhonemeEvent(**p) for p in s["phonemes"]),
            )
        )
    return MusicScore(tuple(syllables), payload["tempo_bpm"], payload["title"])


def score_to_musicxml(
    notes: Sequence[tuple[int | None, int, str]],
    tempo_bpm: float,
    divisions: int = 480,
    beats_per_measure: int = 4,
    title: str = "",
) -> str:
    """Write a minimal MusicXML document from ``(midi or None, divisions, lyric)``.

    Measures are filled greedily; notes are never split across barlines, so a
    measure may run long. That is fine for this reader, which ignores bars.
    """
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<score-partwise version="3.1">',
        f"  <work><work-title>{title}</work-title></work>",
        '  <part-list><score-part id="P1"><part-name>Voice</part-name></score-part></part-list>',
        '  <part id="P1">',
    ]
    capacity = divisions * beats_per_measure
    used, number = capacity, 0
    for midi, dur, lyric in notes:
        if used >= capacity:
            if number:
                out.append("    </measure>")
            number += 1
            used = 0
            out.append(f'    <measure number="{number}">')
            if number == 1:
                out.append(
                    f"      <attributes><divisions>{divisions}</divisions>"
                    f"<time><beats>{beats_per_measure}</beats><beat-type>4</beat-type></time></attributes>"
                )
                out.append(
                    "      <direction><direction-type><metronome><beat-unit>quarter</beat-unit>"
                    f"<per-minute>{tempo_bpm:g}</per-minute></metronome></direction-type>"
                    f'<sound tempo="{tempo_bpm:g}"/></direction>'
                )
        out.append("      <note>")
        if midi is None:
            out.append("        <rest/>")
        else:
            name = midi_to_name(midi)
            alter = "<alter>1</alter>" if "#" in name else ""
            out.append(
                f"        <pitch><step>{name[0]}</step>{alter}<octave>{midi // 12 - 1}</octave></pitch>"
            )
        out.append(f"        <duration>{dur}</duration>")
        if midi is not None:
            out.append(f"        <lyric><syllabic>single</syllabic><text>{lyric}</text></lyric>")
        out.append("      </note>")
        used += dur
    out += ["    </measure>", "  </part>", "</score-partwise>", ""]
    return "\n".join(out)
