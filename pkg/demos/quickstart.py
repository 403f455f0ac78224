"""Train every stage on the synthetic corpus, then sing a new score.

    python demos/quickstart.py /tmp/singsynth-demo [--fast]

``--fast`` cuts the training budgets to a few steps; the output is noise but
every stage runs end to end in about a minute.
"""

import argparse
import logging
from pathlib import Path

from singsynth import pipeline
from singsynth.config import toy_preset
from singsynth.frontend import score_to_musicxml


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=Path)
    ap.add_argument("--fast", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = toy_preset()
    cfg.base_dir = args.out
    if args.fast:
        for key, value in {"duration.max_epochs": "20", "acoustic.steps": "20", "vocoder.steps": "20"}.items():
            cfg.set(key, value)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "toy.conf").write_text(cfg.dumps(), encoding="utf-8")

    songs = pipeline.gen_toy(cfg)
    print(f"generated {len(songs)} songs in {cfg.corpus_dir}")
    report = pipeline.prepare(cfg)
    print(f"prepared {len(report.rows)} utterances, {len(report.failures)} failures")
    for stage in pipeline.STAGES:
        print(f"trained {stage}: {pipeline.train_stage(cfg, stage)}")

    # A score the models have never seen: a rising scale on "la".
    notes = [(57 + step, 480, "la4") for step in (0, 2, 4, 5, 7, 5, 4, 2)] + [(None, 480, "")]
    score_path = args.out / "scale.xml"
    score_path.write_text(score_to_musicxml(notes, 100.0, title="scale"), encoding="utf-8")
    result = pipeline.synthesize_file(cfg, score_path, args.out / "scale.wav")
    print(f"wrote {args.out / 'scale.wav'} ({len(result.wave) / cfg.audio.sample_rate:.2f} s)")

    metrics = pipeline.evaluate_corpus(cfg)
    print(f"training songs resynthesised: {metrics.format()}")
    print(f"the same steps from the shell: bytesing <command> --config {args.out / 'toy.conf'}")


if __name__ == "__main__":
    main()
