#!/usr/bin/env python3
"""Train the encoder-ablated and full desk models on one synthetic
corpus and print a side-by-side comparison of detection metrics.

The ablated variant drops the encoder branch and uses a single pooling
head; the full variant enables both. Expect roughly fifteen minutes on
one CPU core at the default sizes.

Usage:
    python3 scripts/run_desk_experiment.py --out-dir runs/ablation
    python3 scripts/run_desk_experiment.py --quick   # minutes, loose metrics
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

from spkfuse.evaluation import cosine_score, evaluate
from spkfuse.features import cepstral_mean_subtract
from spkfuse.network import SpeakerEmbeddingModel, desk_config
from spkfuse.training import (desk_train_config, make_synthetic_corpus,
                              make_trials, split_corpus, train)


def run_variant(label, net_cfg, train_cfg, train_utts, held, trials, out_dir):
    model = SpeakerEmbeddingModel(net_cfg, seed=train_cfg.seed)
    n_params = sum(p.data.size for _, p in model.params())
    print(f"[{label}] {n_params:,} parameters, "
          f"{train_cfg.total_iters} iterations")
    start = time.perf_counter()
    ckpt_dir = Path(out_dir) / label if out_dir else None
    result = train(model, train_utts, train_cfg, checkpoint_dir=ckpt_dir,
                   trace_path=ckpt_dir / "trace.tsv" if ckpt_dir else None)
    train_seconds = time.perf_counter() - start

    embeddings = {
        u.utt_id: model.embed(cepstral_mean_subtract(u.coeffs)) for u in held
    }
    scored = []
    for t in trials:
        t.score = cosine_score(embeddings[t.enroll], embeddings[t.test])
        scored.append(t)
    metrics = evaluate(scored)
    first = result.trace[0].loss
    return dict(label=label, params=n_params, seconds=train_seconds,
                first_loss=first, final_loss=result.final_loss,
                eer=metrics.eer, min_dcf=metrics.min_dcf)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default=None,
                    help="keep checkpoints and traces under this directory")
    ap.add_argument("--speakers", type=int, default=8)
    ap.add_argument("--utts", type=int, default=20)
    ap.add_argument("--holdout", type=int, default=5)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--quick", action="store_true",
                    help="60-iteration smoke run instead of the full schedule")
    args = ap.parse_args(argv)

    net_common = dict(num_speakers=args.speakers)
    train_cfg = desk_train_config(seed=args.seed)
    if args.quick:
        train_cfg = desk_train_config(seed=args.seed, cycle_len_iters=30,
                                      cycles=2)

    corpus = make_synthetic_corpus(args.speakers, args.utts, num_frames=320,
                                   seed=args.seed)
    train_utts, held = split_corpus(corpus, args.holdout)
    trials = make_trials(held, args.trials, seed=args.seed)
    print(f"corpus: {len(corpus.utterances)} utterances, "
          f"{len(train_utts)} train / {len(held)} eval, {len(trials)} trials")

    rows = []
    for label, cfg in (
        ("ablated", desk_config(encoder_branch=False, pooling_heads=1,
                                **net_common)),
        ("full", desk_config(**net_common)),
    ):
        rows.append(run_variant(label, cfg, train_cfg, train_utts, held,
                                list(trials), args.out_dir))

    print()
    print(f"{'variant':<10}{'params':>10}{'train s':>9}{'loss0':>9}"
          f"{'lossN':>9}{'EER%':>8}{'MinDCF':>9}")
    for r in rows:
        print(f"{r['label']:<10}{r['params']:>10,}{r['seconds']:>9.1f}"
              f"{r['first_loss']:>9.3f}{r['final_loss']:>9.4f}"
              f"{100 * r['eer']:>8.2f}{r['min_dcf']:>9.4f}")
    better = min(rows, key=lambda r: r["eer"])
    print(f"\nlower EER: {better['label']} "
          f"({100 * better['eer']:.2f}% vs "
          f"{100 * max(rows, key=lambda r: r['eer'])['eer']:.2f}%)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
