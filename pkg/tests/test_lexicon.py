import pytest

from singsynth.frontend import (
    FINAL,
    INITIAL,
    ZERO_INITIAL,
    Lexicon,
    LexiconError,
    default_lexicon,
    lyric_to_pinyin,
    phonemize,
    split_tone,
)


def test_table_examples():
    assert phonemize("shuai", 4) == [("sh", INITIAL), ("uai", FINAL)]
    assert phonemize("an", 1) == [("an", ZERO_INITIAL)]
    assert phonemize("zhong", 1) == [("zh", INITIAL), ("ong", FINAL)]


def test_unknown_syllable_names_it():
    with pytest.raises(LexiconError, match="xyzzy"):
        phonemize("xyzzy", 1)


def test_tone_range_checked():
    with pytest.raises(ValueError):
        phonemize("ma", 5)


def test_every_entry_decomposes():
    lex = default_lexicon()
    inventory = set(lex.phonemes)
    assert len(lex) > 400
    for pinyin in lex.entries:
        phones = phonemize(pinyin, 0, lex)
        assert 1 <= len(phones) <= 2
        if len(phones) == 2:
            assert [t for _, t in phones] == [INITIAL, FINAL]
        else:
            assert phones[0][1] == ZERO_INITIAL
        assert all(p in inventory for p, _ in phones)


def test_inventory_order_and_silences():
    phones = default_lexicon().phonemes
    assert phones[:2] == ("sil", "rest")
    assert len(set(phones)) == len(phones)


@pytest.mark.parametrize("pinyin,expected", [
    ("ju", [("j", INITIAL), ("v", FINAL)]),
    ("xuan", [("x", INITIAL), ("van", FINAL)]),
    ("zhi", [("zh", INITIAL), ("iii", FINAL)]),
    ("si", [("s", INITIAL), ("ii", FINAL)]),
    ("yi", [("i", ZERO_INITIAL)]),
    ("wei", [("ui", ZERO_INITIAL)]),
    ("yu", [("v", ZERO_INITIAL)]),
    ("lv", [("l", INITIAL), ("v", FINAL)]),
])
def test_spelling_conventions(pinyin, expected):
    assert phonemize(pinyin, 0) == expected


def test_split_tone():
    assert split_tone("shan3") == ("shan", 3)
    assert split_tone("a5") == ("a", 0)
    assert split_tone("de") == ("de", 0)
    assert split_tone("Lü4") == ("lv", 4)
    for bad in ("shan33", "sh-an", "6"):
        with pytest.raises(LexiconError):
            split_tone(bad)


def test_hanzi_first_reading():
    assert lyric_to_pinyin("闪") == ("shan", 3)
    assert lyric_to_pinyin("都") == ("dou", 1)
    with pytest.raises(LexiconError):
        lyric_to_pinyin("龘")


def test_from_tsv_rejects_bad_rows():
    assert Lexicon.from_tsv("ma\tm\ta\n\n# note\nan\t\tan\n").entries == {"ma": ("m", "a"), "an": (None, "an")}
    with pytest.raises(ValueError, match="line 1"):
        Lexicon.from_tsv("ma\tm\n")
