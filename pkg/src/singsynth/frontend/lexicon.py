"""Pinyin lexicon, phoneme inventory and grapheme-to-phoneme lookup."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

INITIAL = "initial"
FINAL = "final"
ZERO_INITIAL = "zero-initial"
SILENCE = "silence"
PHONEME_TYPES = (INITIAL, FINAL, ZERO_INITIAL, SILENCE)

SIL = "sil"
REST = "rest"

_SYLLABLE = re.compile(r"^([a-zv]+)([0-5])?$")


class LexiconError(KeyError):
    """Unknown pinyin syllable or malformed lyric token."""

    def __str__(self) -> str:  # KeyError quotes its argument; keep messages readable
        return str(self.args[0])


@dataclass(frozen=True)
class Lexicon:
    """Maps toneless pinyin to ``(initial or None, final)``."""

    entries: dict[str, tuple[str | None, str]]

    @classmethod
    def from_tsv(cls, text: str) -> "Lexicon":
        entries: dict[str, tuple[str | None, str]] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3 or not cols[0] or not cols[2]:
                raise ValueError(f"lexicon line {lineno}: expected pinyin<TAB>initial<TAB>final")
            entries[cols[0]] = (cols[1] or None, cols[2])
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))

    def __contains__(self, pinyin: str) -> bool:
        return pinyin in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def phonemes(self) -> tuple[str, ...]:
        """Phoneme inventory: ``sil``, ``rest``, then initials and finals, sorted."""
        initials = {i for i, _ in self.entries.values() if i}
        finals = {f for _, f in self.entries.values()}
        return (SIL, REST) + tuple(sorted(initials)) + tuple(sorted(finals - initials))


@lru_cache(maxsize=None)
def default_lexicon() -> Lexicon:
    text = resources.files("singsynth.frontend").joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
    return Lexicon.from_tsv(text)


@lru_cache(maxsize=None)
def default_hanzi_table() -> dict[str, str]:
    """First-choice pronunciation for each character in the shipped hanzi table."""
    text = resources.files("singsynth.frontend").joinpath("data/hanzi.tsv").read_text(encoding="utf-8")
    table = {}
    for line in text.splitlines():
        if line.strip():
            char, readings = line.split("\t")
            table[char] = readings.split(",")[0]
    return table


def split_tone(token: str) -> tuple[str, int]:
    """``"shuai4"`` -> ``("shuai", 4)``. Tone 5 and a missing digit mean neutral (0)."""
    norm = token.strip().lower().replace("ü", "v").replace("u:", "v")
    m = _SYLLABLE.match(norm)
    if not m:
        raise LexiconError(f"malformed pinyin token {token!r}")
    tone = int(m.group(2)) if m.group(2) else 0
    return m.group(1), 0 if tone == 5 else tone


def phonemize(pinyin: str, tone: int, lexicon: Lexicon | None = None) -> list[tuple[str, str]]:
    """Split a toneless pinyin syllable into typed phonemes.

    >>> phonemize("shuai", 4)
    [('sh', 'initial'), ('uai', 'final')]
    >>> phonemize("an", 1)
    [('an', 'zero-initial')]

    The tone is validated here but attached to the phonemes by the caller.
    """
    lexicon = lexicon or default_lexicon()
    if not 0 <= tone <= 4:
        raise ValueError(f"tone must be in 0..4, got {tone}")
    try:
        initial, final = lexicon.entries[pinyin]
    except KeyError:
        raise LexiconError(f"unknown pinyin syllable {pinyin!r}") from None
    if initial is None:
        return [(final, ZERO_INITIAL)]
    return [(initial, INITIAL), (final, FINAL)]


def lyric_to_pinyin(text: str, hanzi: dict[str, str] | None = None) -> tuple[str, int]:
    """Resolve one lyric token (tone-numbered pinyin or a single hanzi)."""
    text = text.strip()
    if len(text) == 1 and "一" <= text <= "鿿":
        table = default_hanzi_table() if hanzi is None else hanzi
        if text not in table:
            raise LexiconError(f"no pronunciation for {text!r}")
        text = table[text]
    return split_tone(text)
