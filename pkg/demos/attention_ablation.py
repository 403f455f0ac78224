"""Compare GMM attention with the hard frame-to-phoneme alignment.

    python demos/attention_ablation.py /tmp/singsynth-ablation

Duration model and vocoder are trained once and shared, so the two runs
differ only in the acoustic model. Expect roughly an hour on one CPU core.
"""

import argparse
import dataclasses
from pathlib import Path

from singsynth import pipeline
from singsynth.acoustic import train_acoustic
from singsynth.config import toy_preset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    cfg = toy_preset()
    cfg.base_dir = args.out
    pipeline.gen_toy(cfg)
    pipeline.prepare(cfg)
    shared = {}
    for stage in ("duration", "vocoder"):
        pipeline.train_stage(cfg, stage)
        shared[stage] = pipeline.load_stage(cfg, stage)

    data = pipeline.acoustic_dataset(cfg)
    for attention in (True, False):
        model = train_acoustic(data, dataclasses.replace(cfg.acoustic_config(), use_attention=attention), log_every=0)
        report = pipeline.evaluate_corpus(cfg, out_dir=args.out / f"eval_attention_{attention}",
                                          models={**shared, "acoustic": model})
        print(f"attention={attention}: {report.format()}")


if __name__ == "__main__":
    main()
