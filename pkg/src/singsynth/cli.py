"""``bytesing`` command line.

Every failure ends with one line on stderr of the form
``error {"command": ..., "type": ..., "message": ...}`` and exit status 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bstf, pipeline
from .config import PipelineConfig
from .evaluation import (
    AttentionTrace,
    alignment_diagnostics,
    compare,
    evaluate_waves,
    extract_f0,
    extract_mel,
    read_wav,
    write_wav,
)
from .duration import allocate, predict_durations
from .frontend import Vocab, build_duration_inputs, parse_musicxml, segment_utterances

log = logging.getLogger("bytesing")


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    for item in args.set or []:
        key, _, value = item.partition("=")
        cfg.set(key.strip(), value.strip())
    if args.use_attention is not None:
        cfg.set("use_attention", args.use_attention)
    if args.use_tone is not None:
        cfg.set("use_tone", args.use_tone)
    cfg.__post_init__()
    return cfg


def _score(path: str):
    score = parse_musicxml(Path(path).read_text(encoding="utf-8"))
    if not score.title:
        score = type(score)(score.syllables, score.tempo_bpm, Path(path).stem)
    return score


# --------------------------------------------------------------------------
# Commands


def cmd_gen_toy(cfg, args):
    names = pipeline.gen_toy(cfg)
    return {"songs": len(names), "corpus": str(cfg.corpus_dir)}


def cmd_prepare(cfg, args):
    report = pipeline.prepare(cfg)
    return {"utterances": len(report.rows), "failures": len(report.failures)}


def _train(stage):
    def run(cfg, args):
        if args.steps is not None:
            key = {"duration": "duration.max_epochs", "acoustic": "acoustic.steps", "vocoder": "vocoder.steps"}[stage]
            cfg.set(key, str(args.steps))
        return {"checkpoint": str(pipeline.train_stage(cfg, stage))}
    return run


def cmd_synth(cfg, args):
    res = pipeline.synthesize_file(cfg, args.score, args.out, seed=args.seed)
    if args.mel_dir:
        _write_mels(res, Path(args.mel_dir))
    return {"wav": args.out, "seconds": len(res.wave) / cfg.audio.sample_rate, "frames": res.total_frames}


def _write_mels(res, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for uid, mel in res.mels.items():
        bstf.save(out / f"{uid}.mel.bstf", mel.astype(np.float32))
        res.traces[uid].save(out / f"{uid}.attn.ckpt")


def cmd_duration_predict(cfg, args):
    """Allocated durations: a TSV for ``--score``, else frame files for every manifest utterance."""
    model = pipeline.load_stage(cfg, "duration")
    vocab = Vocab.from_lexicon()
    if args.score:
        score = _score(args.score)
        utts = segment_utterances(score, cfg.frontend.rest_threshold_sec, prefix=score.title)
    else:
        utts = [pipeline.load_utterance(cfg.workdir / "utts" / f"{r.utterance}.json")
                for r in pipeline.read_manifest(cfg.workdir / "manifest.txt")]
    done = [allocate(u, predict_durations(build_duration_inputs(u, model.stats, vocab), model), cfg.hop_sec)
            for u in utts]
    if args.score:
        lines = ["utterance\tphoneme\tseconds\tframes"] + [
            f"{u.utterance_id}\t{p.ph}\t{p.allocated_sec:.6f}\t{p.allocated_frames}" for u in done for p in u.phonemes
        ]
        text = "\n".join(lines) + "\n"
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    else:
        out = Path(args.out or cfg.workdir / "predicted")
        out.mkdir(parents=True, exist_ok=True)
        for u in done:
            bstf.save(out / f"{u.utterance_id}.frames.bstf",
                      np.array([p.allocated_frames for p in u.phonemes], dtype=np.int32))
    return {"utterances": len(done), "phonemes": sum(len(u.phonemes) for u in done)}


def cmd_acoustic_synth(cfg, args):
    res = pipeline.synthesize(cfg, _score(args.score), vocode=False)
    _write_mels(res, Path(args.out_dir))
    return {"utterances": len(res.mels), "frames": int(sum(len(m) for m in res.mels.values()))}


def cmd_vocoder_generate(cfg, args):
    voc = pipeline.Vocoder.load(args.checkpoint) if args.checkpoint else pipeline.load_stage(cfg, "vocoder")
    mel = bstf.load(args.mel)
    wave = voc.generate(mel, args.mode, args.seed)
    write_wav(args.out, wave, cfg.audio.sample_rate)
    return {"wav": args.out, "samples": len(wave)}


def _features(path: str):
    """(mel, f0 track or None) from a WAV or a mel BSTF file."""
    if path.endswith(".wav"):
        wave, _ = read_wav(path)
        return extract_mel(wave), extract_f0(wave), wave
    return bstf.load(path).astype(np.float64), None, None


def cmd_evaluate(cfg, args):
    if not args.ref and not args.hyp:
        report = pipeline.evaluate_corpus(cfg)
    elif not (args.ref and args.hyp):
        raise ValueError("give both --ref and --hyp, or neither to evaluate the training songs")
    else:
        mel_r, f0_r, wave_r = _features(args.ref)
        mel_h, f0_h, wave_h = _features(args.hyp)
        if wave_r is not None and wave_h is not None:
            report = evaluate_waves(wave_r, wave_h)
        elif wave_r is None and wave_h is None:
            report = compare(mel_r, mel_h)
        else:
            raise ValueError("compare two WAVs or two mel files, not one of each")
        if args.csv:
            _plot_csv(args.csv, mel_r, mel_h, f0_r, f0_h)
    if args.attention:
        summary = alignment_diagnostics(AttentionTrace.load(args.attention), cfg.acoustic.reduction,
                                        cfg.acoustic.downsample_factor)
        if args.attention_csv:
            summary.to_csv(args.attention_csv)
        print(f"attention mean_deviation={summary.mean_deviation:.4f} max_deviation={summary.max_deviation:.4f}")
    payload = report.as_dict()
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=1), encoding="utf-8")
    print(report.format())
    return payload


def _plot_csv(path, mel_r, mel_h, f0_r, f0_h) -> None:
    n = min(len(mel_r), len(mel_h))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "ref_f0_hz", "hyp_f0_hz", "ref_mean_logmel", "hyp_mean_logmel"])
        for i in range(n):
            fr = f0_r.f0_hz[i] if f0_r is not None and i < len(f0_r) else float("nan")
            fh_ = f0_h.f0_hz[i] if f0_h is not None and i < len(f0_h) else float("nan")
            w.writerow([i, fr, fh_, float(mel_r[i].mean()), float(mel_h[i].mean())])


# --------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file driving all stages")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--use-attention", metavar="BOOL", help="true for GMM attention, false for hard alignment")
    common.add_argument("--use-tone", metavar="BOOL")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bytesing", description="Singing voice synthesis toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-toy", parents=[common], help="write the synthetic corpus").set_defaults(func=cmd_gen_toy)
    sub.add_parser("prepare", parents=[common], help="features and manifest").set_defaults(func=cmd_prepare)
    for stage in pipeline.STAGES:
        p = sub.add_parser(f"train-{stage}", parents=[common], help=f"train the {stage} model")
        p.add_argument("--steps", type=int, help="override the step (or epoch) budget")
        p.set_defaults(func=_train(stage))

    p = sub.add_parser("synth", parents=[common], help="MusicXML to WAV")
    p.add_argument("--score", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mel-dir", help="also write per-utterance mels and attention traces here")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("duration.predict", parents=[common], help="allocated phoneme durations")
    p.add_argument("--score", help="MusicXML file; without it every prepared utterance is processed")
    p.add_argument("--out", help="TSV path with --score, else a directory for <utt>.frames.bstf files")
    p.set_defaults(func=cmd_duration_predict)

    p = sub.add_parser("acoustic.synth", parents=[common], help="mels and attention traces for a score")
    p.add_argument("--score", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_acoustic_synth)

    p = sub.add_parser("vocoder.generate", parents=[common], help="mel BSTF file to WAV")
    p.add_argument("--mel", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("sample", "argmax"), default="sample")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="vocoder checkpoint (default: the config's work directory)")
    p.set_defaults(func=cmd_vocoder_generate)

    for name in ("eval", "evaluate"):
        p = sub.add_parser(name, parents=[common], help="objective metrics")
        p.add_argument("--ref", help="reference WAV or mel BSTF")
        p.add_argument("--hyp", help="hypothesis WAV or mel BSTF")
        p.add_argument("--json", help="write the report as JSON here")
        p.add_argument("--csv", help="write per-frame F0 and energy for plotting")
        p.add_argument("--attention", help="attention trace to summarise")
        p.add_argument("--attention-csv", help="write the attention matrix and centroid path here")
        p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        result = args.func(cfg, args)
    except Exception as exc:  # every failure becomes one machine-readable line
        if args.verbose:
            log.exception("command failed")
        print("error " + json.dumps({"command": args.command, "type": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print("ok " + json.dumps({"command": args.command, **(result or {})}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
