"""Singing voice synthesis from MusicXML scores with pinyin lyrics."""

__version__ = "0.1.0"
