import json
from pathlib import Path

import pytest

from singsynth.config import toy_preset
from singsynth.frontend import (
    MusicScore,
    NoteEvent,
    UtteranceScore,
    make_syllable,
    parse_musicxml,
)

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def golden_xml() -> str:
    return (GOLDEN / "twinkle8.xml").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def golden_json() -> dict:
    return json.loads((GOLDEN / "twinkle8.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def golden_score(golden_xml) -> MusicScore:
    return parse_musicxml(golden_xml)


def make_utterance(spec, tempo=120.0, uid="u") -> UtteranceScore:
    """Build an utterance from ``(midi or None, beats, "pinyin<tone>")`` triples."""
    from fractions import Fraction

    from singsynth.frontend import split_tone

    syllables, onset = [], 0.0
    for midi, beats, lyric in spec:
        note = NoteEvent.make(midi, Fraction(beats), tempo, onset)
        onset += note.duration_sec
        if midi is None:
            syllables.append(make_syllable(note))
        else:
            syllables.append(make_syllable(note, *split_tone(lyric)))
    return UtteranceScore(tuple(syllables), tempo, uid)


@pytest.fixture(scope="session")
def toy_workdir(tmp_path_factory):
    """Toy corpus plus prepared features, shared by the pipeline tests."""
    from singsynth import pipeline

    base = tmp_path_factory.mktemp("toy")
    cfg = toy_preset()
    cfg.base_dir = base
    pipeline.gen_toy(cfg)
    report = pipeline.prepare(cfg)
    assert not report.failures
    return cfg


TINY_TRAINING = {"duration.max_epochs": "3", "acoustic.steps": "2", "vocoder.steps": "2"}


@pytest.fixture(scope="session")
def tiny_trained(tmp_path_factory):
    """Toy corpus with all three stages trained for a handful of steps."""
    from singsynth import pipeline

    cfg = toy_preset()
    for k, v in TINY_TRAINING.items():
        cfg.set(k, v)
    cfg.base_dir = tmp_path_factory.mktemp("trained")
    pipeline.gen_toy(cfg)
    pipeline.prepare(cfg)
    for stage in pipeline.STAGES:
        pipeline.train_stage(cfg, stage)
    return cfg


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
