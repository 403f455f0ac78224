"""Stage orchestration: toy corpus, feature preparation, training, synthesis, evaluation.

Work directory layout::

    manifest.txt              one row per utterance
    failures.txt              prepare-time problems (the run continues past them)
    utts/<id>.json            utterance score
    features/<id>.<kind>.bstf dur (frames), ids, po, mel, audio
    checkpoints/{duration,acoustic,vocoder}.ckpt
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bstf
from .acoustic import AcousticBundle, train_acoustic
from .config import PipelineConfig
from .duration import DurationModel, allocate, predict_durations, train_duration
from .evaluation import F0Track, MetricReport, extract_f0, extract_mel, f0_corr, f0_rmse, msd, read_wav, write_wav
from .frontend import (
    AcousticInput,
    MusicScore,
    UtteranceScore,
    Vocab,
    build_acoustic_inputs,
    build_duration_inputs,
    du_stats,
    parse_musicxml,
    score_from_json,
    score_to_json,
    segment_utterances,
)
from .frontend.lexicon import SILENCE
from .toy import gen_toy_corpus, read_labels
from .vocoder import Vocoder, quantize_audio, train_vocoder

log = logging.getLogger(__name__)

MANIFEST_HEADER = "utterance\tsong\tstart_frame\tnum_frames\tnum_phonemes"
STAGES = ("duration", "acoustic", "vocoder")
TRAINING_ONLY = frozenset({"steps", "max_epochs", "learning_rate", "batch_size", "seq_frames", "seed"})


class PipelineError(RuntimeError):
    """A stage cannot run; the message names the stage and the missing piece."""


@dataclass(frozen=True)
class ManifestRow:
    utterance: str
    song: str
    start_frame: int
    num_frames: int
    num_phonemes: int


def read_manifest(path: str | Path) -> list[ManifestRow]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise PipelineError(f"{path}: not a manifest")
    rows = []
    for line in lines[1:]:
        u, s, a, n, p = line.split("\t")
        rows.append(ManifestRow(u, s, int(a), int(n), int(p)))
    return rows


def write_manifest(path: str | Path, rows: list[ManifestRow]) -> None:
    body = [MANIFEST_HEADER] + [
        f"{r.utterance}\t{r.song}\t{r.start_frame}\t{r.num_frames}\t{r.num_phonemes}" for r in rows
    ]
    Path(path).write_text("\n".join(body) + "\n", encoding="utf-8")


def _feature(work: Path, utt: str, kind: str) -> Path:
    return work / "features" / f"{utt}.{kind}.bstf"


def _checkpoint(cfg: PipelineConfig, stage: str) -> Path:
    return cfg.workdir / "checkpoints" / f"{stage}.ckpt"


# --------------------------------------------------------------------------
# Corpus and features


def gen_toy(cfg: PipelineConfig) -> list[str]:
    return gen_toy_corpus(cfg.toy_spec(), cfg.corpus_dir)


def save_utterance(path: Path, utt: UtteranceScore) -> None:
    score = MusicScore(utt.syllables, utt.tempo_bpm, title=utt.utterance_id)
    payload = json.loads(score_to_json(score))
    payload["start_sec"] = utt.start_sec
    path.write_text(json.dumps(payload, indent=1, ensure_ascii=False), encoding="utf-8")


def load_utterance(path: Path) -> UtteranceScore:
    text = path.read_text(encoding="utf-8")
    score = score_from_json(text)
    return UtteranceScore(score.syllables, score.tempo_bpm, score.title, json.loads(text)["start_sec"])


@dataclass
class PrepareReport:
    rows: list[ManifestRow]
    failures: list[str]


def prepare(cfg: PipelineConfig) -> PrepareReport:
    """Segment every song, align its labels and write per-utterance features.

    Songs missing a WAV, XML or label file, and utterances whose label total
    differs from the audio by ``frontend.mismatch_frames`` or more, land in
    the failure report. A one-frame disagreement is truncated to the shorter.
    """
    corpus, work = cfg.corpus_dir, cfg.workdir
    if not corpus.is_dir():
        raise PipelineError(f"prepare: corpus directory {corpus} does not exist")
    (work / "features").mkdir(parents=True, exist_ok=True)
    (work / "utts").mkdir(parents=True, exist_ok=True)
    hop, hop_sec = cfg.audio.hop, cfg.hop_sec
    vocab = Vocab.from_lexicon()
    rows: list[ManifestRow] = []
    failures: list[str] = []
    songs = sorted({p.stem for p in corpus.iterdir() if p.suffix in (".xml", ".wav", ".lab")})
    for song in songs:
        paths = {ext: corpus / f"{song}.{ext}" for ext in ("xml", "wav", "lab")}
        missing = [ext for ext, p in paths.items() if not p.exists()]
        if missing:
            failures.append(f"{song}\tmissing {','.join(missing)}")
            continue
        try:
            score = parse_musicxml(paths["xml"].read_text(encoding="utf-8"))
            wave, sr = read_wav(paths["wav"])
            labels = read_labels(paths["lab"], hop_sec)
        except Exception as exc:  # report and continue with the next song
            failures.append(f"{song}\t{type(exc).__name__}: {exc}")
            continue
        if sr != cfg.audio.sample_rate:
            failures.append(f"{song}\tsample rate {sr} != {cfg.audio.sample_rate}")
            continue
        for utt in segment_utterances(score, cfg.frontend.rest_threshold_sec, prefix=song):
            problem = _prepare_utterance(cfg, vocab, utt, wave, labels, rows)
            if problem:
                failures.append(f"{utt.utterance_id}\t{problem}")
    write_manifest(work / "manifest.txt", rows)
    (work / "failures.txt").write_text("".join(f + "\n" for f in failures), encoding="utf-8")
    for f in failures:
        log.warning("prepare: %s", f)
    return PrepareReport(rows, failures)


def _prepare_utterance(cfg, vocab, utt: UtteranceScore, wave, labels, rows) -> str | None:
    hop, hop_sec, work = cfg.audio.hop, cfg.hop_sec, cfg.workdir
    start = int(np.floor(utt.start_sec / hop_sec + 0.5))
    expected = int(np.floor(utt.total_sec / hop_sec + 0.5))
    mine = [l for l in labels if start <= l.start_frame < start + expected]
    names = [p.ph for p in utt.phonemes]
    if [l.phoneme for l in mine] != names:
        return f"label phonemes {[l.phoneme for l in mine]} do not match score {names}"
    frames = np.array([l.end_frame - l.start_frame for l in mine], dtype=np.int64)
    if np.any(frames < 1):
        return "label with non-positive length"
    audio = wave[start * hop:(start + expected) * hop]
    mel_frames = -(-len(audio) // hop)
    gap = int(frames.sum()) - mel_frames
    if abs(gap) >= cfg.frontend.mismatch_frames:
        return f"mel/label mismatch: {mel_frames} mel frames vs {int(frames.sum())} label frames"
    if gap > 0:
        frames[int(np.argmax(frames))] -= gap
    n = int(frames.sum())
    audio = np.concatenate([audio, np.zeros(max(0, n * hop - len(audio)))])[: n * hop]
    mel = extract_mel(audio)[:n]
    aligned = utt.with_allocation(frames * hop_sec, frames)
    x = build_acoustic_inputs(aligned, vocab)
    uid = utt.utterance_id
    save_utterance(work / "utts" / f"{uid}.json", utt)
    bstf.save(_feature(work, uid, "dur"), frames.astype(np.int32))
    bstf.save(_feature(work, uid, "ids"), x.ids())
    bstf.save(_feature(work, uid, "po"), x.po.astype(np.float32))
    bstf.save(_feature(work, uid, "mel"), mel.astype(np.float32))
    bstf.save(_feature(work, uid, "audio"), quantize_audio(audio).astype(np.int32))
    rows.append(ManifestRow(uid, uid.rsplit("_", 1)[0], start, n, len(names)))
    return None


def _rows(cfg: PipelineConfig, stage: str) -> list[ManifestRow]:
    path = cfg.workdir / "manifest.txt"
    if not path.exists():
        raise PipelineError(f"{stage}: no manifest at {path}; run prepare first")
    rows = read_manifest(path)
    if not rows:
        raise PipelineError(f"{stage}: manifest is empty")
    return rows


# --------------------------------------------------------------------------
# Training


def _echo(cfg: PipelineConfig, stage: str) -> dict:
    return {"audio": dataclasses.asdict(cfg.audio), "pipeline": cfg.to_dict(), "stage": stage}


def duration_dataset(cfg: PipelineConfig, rows=None):
    rows = rows or _rows(cfg, "train-duration")
    utts = [load_utterance(cfg.workdir / "utts" / f"{r.utterance}.json") for r in rows]
    stats = du_stats(utts)
    data = []
    for r, u in zip(rows, utts):
        x = build_duration_inputs(u, stats)
        y = bstf.load(_feature(cfg.workdir, r.utterance, "dur")).astype(np.float64)
        mask = np.array([p.tp != SILENCE for p in u.phonemes], dtype=np.float64)
        data.append((x, y, mask))
    return data, stats


def acoustic_dataset(cfg: PipelineConfig, rows=None) -> list[tuple[AcousticInput, np.ndarray]]:
    rows = rows or _rows(cfg, "train-acoustic")
    w = cfg.workdir
    return [
        (AcousticInput.from_arrays(bstf.load(_feature(w, r.utterance, "ids")), bstf.load(_feature(w, r.utterance, "po"))),
         bstf.load(_feature(w, r.utterance, "mel")))
        for r in rows
    ]


def vocoder_dataset(cfg: PipelineConfig, rows=None):
    rows = rows or _rows(cfg, "train-vocoder")
    w = cfg.workdir
    return [(bstf.load(_feature(w, r.utterance, "mel")), bstf.load(_feature(w, r.utterance, "audio"))) for r in rows]


def train_stage(cfg: PipelineConfig, stage: str) -> Path:
    """Train one model from prepared features and write its checkpoint."""
    if stage not in STAGES:
        raise PipelineError(f"unknown stage {stage!r}")
    out = _checkpoint(cfg, stage)
    out.parent.mkdir(parents=True, exist_ok=True)
    if stage == "duration":
        data, stats = duration_dataset(cfg)
        model = train_duration(data, cfg.duration_config(Vocab.from_lexicon().duration_input_dim), stats)
        model.save(out, _echo(cfg, stage))
    elif stage == "acoustic":
        train_acoustic(acoustic_dataset(cfg), cfg.acoustic_config()).save(out, _echo(cfg, stage))
    else:
        train_vocoder(vocoder_dataset(cfg), cfg.vocoder_config()).save(out, _echo(cfg, stage))
    log.info("wrote %s", out)
    return out


def load_stage(cfg: PipelineConfig, stage: str):
    """Load a checkpoint, refusing one whose stage or audio settings disagree with ``cfg``."""
    path = _checkpoint(cfg, stage)
    if not path.exists():
        raise PipelineError(f"{stage}: checkpoint {path} not found; run train-{stage} first")
    if stage == "duration":
        model_cfg, cls = cfg.duration_config(Vocab.from_lexicon().duration_input_dim), DurationModel
    elif stage == "acoustic":
        model_cfg, cls = cfg.acoustic_config(), AcousticBundle
    else:
        model_cfg, cls = cfg.vocoder_config(), Vocoder
    # Budget and optimiser settings do not change what the weights mean.
    shape = {k: v for k, v in dataclasses.asdict(model_cfg).items() if k not in TRAINING_ONLY}
    return cls.load(path, {"audio": dataclasses.asdict(cfg.audio), stage: shape})


# --------------------------------------------------------------------------
# Synthesis and evaluation


@dataclass
class SynthesisResult:
    wave: np.ndarray | None
    mels: dict[str, np.ndarray]
    traces: dict
    utterances: list[UtteranceScore]
    total_frames: int


def synthesize(
    cfg: PipelineConfig,
    score: MusicScore,
    models: dict | None = None,
    durations: dict[str, np.ndarray] | None = None,
    vocode: bool = True,
    seed: int | None = None,
) -> SynthesisResult:
    """Score -> duration -> constrain -> expand -> mel -> waveform.

    Utterances are placed at their score onsets and the gaps are silent, so
    the waveform lasts ``round(total score seconds / hop)`` hops. ``durations``
    maps utterance ids to ground-truth frame counts, bypassing the duration
    model.
    """
    models = dict(models or {})
    hop, hop_sec = cfg.audio.hop, cfg.hop_sec
    if durations is None and "duration" not in models:
        models["duration"] = load_stage(cfg, "duration")
    if "acoustic" not in models:
        models["acoustic"] = load_stage(cfg, "acoustic")
    if vocode and "vocoder" not in models:
        models["vocoder"] = load_stage(cfg, "vocoder")
    total_sec = sum(s.note.duration_sec for s in score.syllables)
    total_frames = int(np.floor(total_sec / hop_sec + 0.5))
    wave = np.zeros(total_frames * hop) if vocode else None
    mels, traces, utts = {}, {}, []
    vocab = Vocab.from_lexicon()
    prefix = score.title or "utt"
    for utt in segment_utterances(score, cfg.frontend.rest_threshold_sec, prefix=prefix):
        if durations is not None and utt.utterance_id in durations:
            frames = np.asarray(durations[utt.utterance_id], dtype=np.int64)
            utt = utt.with_allocation(frames * hop_sec, frames)
        else:
            dm: DurationModel = models["duration"]
            raw = predict_durations(build_duration_inputs(utt, dm.stats, vocab), dm)
            utt = allocate(utt, raw, hop_sec)
        mel, trace = models["acoustic"].synthesize(build_acoustic_inputs(utt, vocab))
        mels[utt.utterance_id], traces[utt.utterance_id] = mel, trace
        utts.append(utt)
        if vocode:
            seg = models["vocoder"].generate(mel, "sample", cfg.seed if seed is None else seed)
            start = int(np.floor(utt.start_sec / hop_sec + 0.5)) * hop
            seg = seg[: len(wave) - start]
            wave[start:start + len(seg)] = seg
    return SynthesisResult(wave, mels, traces, utts, total_frames)


def synthesize_file(cfg: PipelineConfig, xml_path: str | Path, out_wav: str | Path, **kw) -> SynthesisResult:
    score = parse_musicxml(Path(xml_path).read_text(encoding="utf-8"))
    if not score.title:
        score = dataclasses.replace(score, title=Path(xml_path).stem)
    result = synthesize(cfg, score, **kw)
    write_wav(out_wav, result.wave, cfg.audio.sample_rate)
    return result


def pooled_report(pairs: list[tuple[np.ndarray, np.ndarray]]) -> MetricReport:
    """Metrics over several ``(ref, hyp)`` waveform pairs, pooled frame-wise."""
    mel_r, mel_h, f_r, f_h = [], [], [], []
    for ref, hyp in pairs:
        a, b = extract_mel(ref), extract_mel(hyp)
        n = min(len(a), len(b))
        ta, tb = extract_f0(ref), extract_f0(hyp)
        mel_r.append(a[:n]); mel_h.append(b[:n])
        f_r.append(ta.f0_hz[:n]); f_h.append(tb.f0_hz[:n])
    ra, ha = F0Track.from_hz(np.concatenate(f_r)), F0Track.from_hz(np.concatenate(f_h))
    both = ra.voiced & ha.voiced
    return MetricReport(
        msd_db=msd(np.concatenate(mel_r), np.concatenate(mel_h)),
        f0_rmse_hz=f0_rmse(ra, ha),
        f0_corr=f0_corr(ra, ha),
        voiced_overlap_frames=int(both.sum()),
        frames=int(sum(len(m) for m in mel_r)),
    )


def evaluate_corpus(cfg: PipelineConfig, songs: list[str] | None = None, out_dir: str | Path | None = None,
                    models: dict | None = None) -> MetricReport:
    """Synthesize training songs and compare with their recordings."""
    rows = _rows(cfg, "eval")
    songs = songs or sorted({r.song for r in rows})
    models = dict(models or {})
    for stage in STAGES:
        if stage not in models:
            models[stage] = load_stage(cfg, stage)
    out = Path(out_dir) if out_dir else cfg.workdir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for song in songs:
        ref, _ = read_wav(cfg.corpus_dir / f"{song}.wav")
        res = synthesize_file(cfg, cfg.corpus_dir / f"{song}.xml", out / f"{song}.wav", models=models)
        pairs.append((ref, res.wave))
    report = pooled_report(pairs)
    (out / "report.json").write_text(json.dumps(report.as_dict(), indent=1), encoding="utf-8")
    return report
