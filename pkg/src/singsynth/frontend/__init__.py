"""Score frontend: MusicXML + pinyin lyrics to phoneme- and frame-level features."""

from .features import (
    PITCH_VOCAB,
    REST_PITCH_ID,
    AcousticInput,
    ConfigurationError,
    Vocab,
    ZStats,
    build_acoustic_inputs,
    build_duration_inputs,
    du_stats,
    pitch_id,
)
from .lexicon import (
    FINAL,
    INITIAL,
    PHONEME_TYPES,
    SILENCE,
    ZERO_INITIAL,
    Lexicon,
    LexiconError,
    default_hanzi_table,
    default_lexicon,
    lyric_to_pinyin,
    phonemize,
    split_tone,
)
from .score import (
    MusicScore,
    NoteEvent,
    PhonemeEvent,
    ScoreError,
    SyllableEvent,
    UtteranceScore,
    make_syllable,
    midi_to_hz,
    midi_to_name,
    name_to_midi,
    parse_musicxml,
    score_from_json,
    score_to_json,
    score_to_musicxml,
    segment_utterances,
)

__all__ = [name for name in dir() if not name.startswith("_")]
