"""One plain-text ``key = value`` file drives every stage.

Keys are either top-level (``seed``, ``use_tone``, ``use_attention``) or
carry a section prefix (``acoustic.reduction = 2``). ``#`` starts a comment.
Sample rate and hop live only in ``audio.*``; model configs derive theirs.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .acoustic.model import AcousticConfig
from .duration import DurationModelConfig
from .evaluation.features import HOP, SAMPLE_RATE
from .toy import ToyCorpusSpec
from .vocoder import VocoderConfig


class ConfigError(ValueError):
    pass


@dataclass
class PathsSection:
    corpus: str = "corpus"
    workdir: str = "work"


@dataclass
class AudioSection:
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP


@dataclass
class ToySection:
    num_songs: int = 8
    notes_per_song: int = 8
    pitch_low: int = 55
    pitch_high: int = 69


@dataclass
class FrontendSection:
    rest_threshold_sec: float = 0.5
    mismatch_frames: int = 2


@dataclass
class DurationSection:
    num_layers: int = 2
    hidden_size: int = 128
    learning_rate: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 500


# Fields that the pipeline owns rather than the user.
_DERIVED = {"seed", "use_tone", "use_attention", "hop", "num_phonemes", "pitch_vocab"}


def _model_section(cls):
    """Mirror a model config's user-settable fields as a section dataclass."""
    hints = typing.get_type_hints(cls)
    specs = []
    for f in fields(cls):
        if f.name in _DERIVED:
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        specs.append((f.name, hints[f.name], field(default=default)))
    return dataclasses.make_dataclass(f"{cls.__name__}Section", specs)


AcousticSection = _model_section(AcousticConfig)
VocoderSection = _model_section(VocoderConfig)

SECTIONS = {
    "paths": PathsSection,
    "audio": AudioSection,
    "toy": ToySection,
    "frontend": FrontendSection,
    "duration": DurationSection,
    "acoustic": AcousticSection,
    "vocoder": VocoderSection,
}
TOP_LEVEL = {"seed": int, "use_tone": bool, "use_attention": bool}


@dataclass
class PipelineConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    audio: AudioSection = field(default_factory=AudioSection)
    toy: ToySection = field(default_factory=ToySection)
    frontend: FrontendSection = field(default_factory=FrontendSection)
    duration: DurationSection = field(default_factory=DurationSection)
    acoustic: typing.Any = field(default_factory=AcousticSection)
    vocoder: typing.Any = field(default_factory=VocoderSection)
    seed: int = 0
    use_tone: bool = False
    use_attention: bool = True
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if (self.audio.sample_rate, self.audio.hop) != (SAMPLE_RATE, HOP):
            raise ConfigError(
                f"audio must be {SAMPLE_RATE} Hz with hop {HOP} (the feature extractor is fixed); "
                f"got {self.audio.sample_rate} Hz / {self.audio.hop}"
            )

    # -- derived settings -------------------------------------------------
    @property
    def hop_sec(self) -> float:
        return self.audio.hop / self.audio.sample_rate

    @property
    def corpus_dir(self) -> Path:
        return self.base_dir / self.paths.corpus

    @property
    def workdir(self) -> Path:
        return self.base_dir / self.paths.workdir

    def toy_spec(self) -> ToyCorpusSpec:
        t = self.toy
        return ToyCorpusSpec(num_songs=t.num_songs, notes_per_song=t.notes_per_song,
                             pitch_range=(t.pitch_low, t.pitch_high), seed=self.seed,
                             sample_rate=self.audio.sample_rate, hop=self.audio.hop)

    def duration_config(self, input_dim: int) -> DurationModelConfig:
        return DurationModelConfig(input_dim=input_dim, seed=self.seed, hop_sec=self.hop_sec,
                                   **dataclasses.asdict(self.duration))

    def acoustic_config(self) -> AcousticConfig:
        return AcousticConfig(use_tone=self.use_tone, use_attention=self.use_attention, seed=self.seed,
                              **dataclasses.asdict(self.acoustic))

    def vocoder_config(self) -> VocoderConfig:
        return VocoderConfig(hop=self.audio.hop, seed=self.seed, **dataclasses.asdict(self.vocoder))

    # -- text form --------------------------------------------------------
    def set(self, key: str, value: str) -> None:
        """Apply one ``key = value`` assignment, converting to the field's type."""
        if "." not in key:
            if key not in TOP_LEVEL:
                raise ConfigError(f"unknown key {key!r}")
            setattr(self, key, _convert(value, TOP_LEVEL[key], key))
            return
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r} in key {key!r}")
        obj = getattr(self, section)
        hints = typing.get_type_hints(type(obj))
        if name not in hints:
            raise ConfigError(f"unknown key {key!r}")
        setattr(obj, name, _convert(value, hints[name], key))

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in TOP_LEVEL}
        for name in SECTIONS:
            for k, v in dataclasses.asdict(getattr(self, name)).items():
                out[f"{name}.{k}"] = list(v) if isinstance(v, tuple) else v
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def loads(cls, text: str, base_dir: str | Path = ".") -> "PipelineConfig":
        cfg = cls(base_dir=Path(base_dir))
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"line {n}: {exc}") from None
        cfg.__post_init__()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        """Read a config file; relative paths inside it resolve against its directory."""
        path = Path(path)
        return cls.loads(path.read_text(encoding="utf-8"), base_dir=path.parent)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _convert(value: str, typ, key: str):
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if origin is tuple:
            inner = typing.get_args(typ)[0]
            return tuple(inner(v) for v in value.replace(" ", "").split(",") if v)
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {key}") from None


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def toy_preset() -> PipelineConfig:
    """Sizes that train in minutes on one CPU core; the acceptance runs use these."""
    cfg = PipelineConfig()
    for key, value in TOY_OVERRIDES.items():
        cfg.set(key, value)
    return cfg


TOY_OVERRIDES = {
    "duration.hidden_size": "32",
    "duration.max_epochs": "600",
    "acoustic.ph_embed_dim": "32",
    "acoustic.pi_embed_dim": "16",
    "acoustic.tone_embed_dim": "8",
    "acoustic.prenet_conv_channels": "64",
    "acoustic.cbhg_bank_size": "4",
    "acoustic.cbhg_bank_channels": "32",
    "acoustic.cbhg_proj_channels": "64",
    "acoustic.cbhg_highway_layers": "2",
    "acoustic.cbhg_gru_size": "32",
    "acoustic.decoder_prenet": "64,64",
    "acoustic.decoder_rnn_size": "128",
    "acoustic.postnet_layers": "3",
    "acoustic.postnet_channels": "64",
    "acoustic.batch_size": "8",
    "acoustic.steps": "600",
    "vocoder.gru_size": "64",
    "vocoder.condition_channels": "32",
    "vocoder.num_conv_blocks": "4",
    "vocoder.head_size": "64",
    "vocoder.batch_size": "32",
    "vocoder.seq_frames": "2",
    "vocoder.learning_rate": "0.003",
    "vocoder.steps": "1500",
}
