"""Command line front end.

Subcommands cover the full loop: `train` fits a model on a synthetic
corpus and materializes features, utterance lists, and a trial list;
`extract` turns utterances into embedding files; `score` applies cosine
scoring to a trial list; `eval` reports error rates from a score file;
`gradcheck` runs the finite-difference suite.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (including gradient-check failures).
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import tensorio
from .config import RunConfig, apply_overrides, config_lines, load_config
from .errors import (ConfigError, DataError, NumericError, SpkfuseError,
                     UsageError)
from .evaluation import (cosine_score, evaluate, read_scores, read_trials,
                         write_scores, write_trials)
from .features import (FeatureCache, cepstral_mean_subtract,
                       mfcc_from_waveform, read_wav)
from .network import SpeakerEmbeddingModel, model_from_checkpoint
from .training import (make_synthetic_corpus, make_trials, split_corpus,
                       train, train_config_echo)

EMBEDDING_SUFFIX = ".tensors"


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of calling sys.exit."""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spkfuse",
                     description="speaker embedding toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command",
                              parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed for corpus, model init, and batch sampling")

    p_train = sub.add_parser("train", help="train a model and write checkpoints")
    common(p_train)
    p_train.add_argument("--synthetic", action="store_true",
                         help="generate the deterministic synthetic corpus")
    p_train.add_argument("--out-dir", default=None,
                         help="root for corpus, cache, and checkpoint paths")

    p_extract = sub.add_parser("extract", help="write one embedding file per utterance")
    p_extract.add_argument("--checkpoint", required=True)
    p_extract.add_argument("--utt-list", required=True,
                           help="text file, one utterance id per line")
    p_extract.add_argument("--out-dir", required=True)
    p_extract.add_argument("--features", default=None,
                           help="feature cache directory to read from")
    p_extract.add_argument("--wav-root", default=None,
                           help="directory with <utt-id>.wav files")

    p_score = sub.add_parser("score", help="cosine-score a trial list")
    p_score.add_argument("--embeddings", required=True)
    p_score.add_argument("--trials", required=True)
    p_score.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="report EER and minimum detection cost")
    p_eval.add_argument("--scores", required=True)
    p_eval.add_argument("--trials", required=True)
    p_eval.add_argument("--out", default=None,
                        help="also write the report line to this file")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--seed", type=int, default=gc.DEFAULT_SEED)
    p_grad.add_argument("--tol", type=float, default=gc.DEFAULT_TOL)
    p_grad.add_argument("--max-dim", type=int, default=gc.DEFAULT_MAX_DIM)
    p_grad.add_argument("--check", default=None, choices=gc.CHECK_NAMES,
                        help="run a single named check")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    cfg = apply_overrides(cfg, list(args.set))
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    return cfg


def _write_utt_list(path: Path, utts) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utts:
            fh.write(f"{utt.utt_id} {utt.speaker}\n")


def _safe_path(root: Path, utt_id: str, suffix: str) -> Path:
    clean = utt_id.strip()
    if not clean or clean.startswith(("/", "\\")) or ".." in Path(clean).parts:
        raise DataError(f"unsafe utterance id {utt_id!r}")
    return root / (clean + suffix)


def _embedding_path(root: Path, utt_id: str) -> Path:
    return _safe_path(root, utt_id, EMBEDDING_SUFFIX)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if not args.synthetic:
        raise UsageError("only --synthetic corpora are supported; pass "
                         "--synthetic to generate one")
    if args.out_dir:
        cfg.paths = cfg.paths.resolved(Path(args.out_dir))
    net, cc = cfg.network, cfg.corpus
    if net.num_speakers != cc.synthetic_speakers:
        raise ConfigError(
            f"net.num_speakers={net.num_speakers} but the synthetic corpus "
            f"has {cc.synthetic_speakers} speakers; set both to one value")

    corpus = make_synthetic_corpus(cc.synthetic_speakers, cc.synthetic_utts,
                                   cc.synthetic_frames, cfg.seed,
                                   feat_dim=net.feat_dim,
                                   noise_scale=cc.synthetic_noise)
    train_utts, held = split_corpus(corpus, cc.synthetic_holdout)

    cache = FeatureCache(cfg.paths.feature_cache)
    for utt in corpus.utterances:
        cache.save(utt.utt_id, utt.coeffs)
    corpus_dir = Path(cfg.paths.corpus_dir)
    _write_utt_list(corpus_dir / "train_utts.txt", train_utts)
    _write_utt_list(corpus_dir / "eval_utts.txt", held)
    trials = make_trials(held, cc.synthetic_trials, cfg.seed)
    Path(cfg.paths.trial_list).parent.mkdir(parents=True, exist_ok=True)
    write_trials(cfg.paths.trial_list, trials)
    print(f"corpus: {len(corpus.utterances)} utterances, "
          f"{len(train_utts)} train / {len(held)} held out, "
          f"{len(trials)} trials -> {cfg.paths.trial_list}")

    model = SpeakerEmbeddingModel(net, seed=cfg.seed)
    extra = dict(train_config_echo(cfg.train))
    extra["run.seed"] = str(cfg.seed)
    ckpt_dir = Path(cfg.paths.checkpoint_dir)
    result = train(model, train_utts, cfg.train, checkpoint_dir=ckpt_dir,
                   trace_path=ckpt_dir / "trace.tsv", header_extra=extra)
    first = result.trace[0].loss if result.trace else float("nan")
    print(f"trained {cfg.train.total_iters} iterations: "
          f"loss {first:.4f} -> {result.final_loss:.4f}")
    for path in result.checkpoints:
        print(f"checkpoint: {path}")
    return 0


def _load_coeffs(utt_id: str, cache: FeatureCache | None,
                 wav_root: Path | None) -> np.ndarray:
    if cache is not None and cache.has(utt_id):
        return cache.load(utt_id)
    if wav_root is not None:
        wav_path = _safe_path(wav_root, utt_id, ".wav")
        if wav_path.exists():
            return mfcc_from_waveform(read_wav(wav_path))
    raise DataError(f"no features or audio found for utterance {utt_id!r}")


def cmd_extract(args) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    cache = FeatureCache(args.features) if args.features else None
    wav_root = Path(args.wav_root) if args.wav_root else None
    if cache is None and wav_root is None:
        raise UsageError("pass --features and/or --wav-root")
    list_path = Path(args.utt_list)
    if not list_path.is_file():
        raise DataError(f"utterance list not found: {list_path}")
    utt_ids = [line.split()[0] for line in list_path.read_text().splitlines()
               if line.strip()]
    if not utt_ids:
        raise DataError(f"{list_path}: no utterance ids")
    out_dir = Path(args.out_dir)
    for utt_id in utt_ids:
        coeffs = cepstral_mean_subtract(_load_coeffs(utt_id, cache, wav_root))
        embedding = model.embed(coeffs)
        path = _embedding_path(out_dir, utt_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        tensorio.save_tensors(path, {"embedding": embedding})
    print(f"wrote {len(utt_ids)} embeddings under {out_dir}")
    return 0


def _load_embedding(root: Path, utt_id: str) -> np.ndarray:
    path = _embedding_path(root, utt_id)
    if not path.exists():
        raise DataError(f"no embedding file for utterance {utt_id!r} under {root}")
    tensors = tensorio.load_tensors(path)
    if "embedding" not in tensors:
        raise DataError(f"{path}: missing 'embedding' entry")
    return tensors["embedding"]


def cmd_score(args) -> int:
    trials = read_trials(args.trials)
    root = Path(args.embeddings)
    cached: dict[str, np.ndarray] = {}
    for trial in trials:
        for utt_id in (trial.enroll, trial.test):
            if utt_id not in cached:
                cached[utt_id] = _load_embedding(root, utt_id)
        trial.score = cosine_score(cached[trial.enroll], cached[trial.test])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_scores(args.out, trials)
    print(f"scored {len(trials)} trials -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    trials = read_trials(args.trials)
    scores = read_scores(args.scores)
    for trial in trials:
        key = (trial.enroll, trial.test)
        if key not in scores:
            raise DataError(f"score file is missing trial {key[0]} {key[1]}")
        trial.score = scores[key]
    metrics = evaluate(trials)
    line = metrics.report_line()
    print(line)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    names = [args.check] if args.check else gc.CHECK_NAMES
    failures = 0
    for name in names:
        result = gc.run_check(name, seed=args.seed, max_dim=args.max_dim,
                              tol=args.tol)
        status = "PASS" if result.passed else "FAIL"
        failures += not result.passed
        print(f"{status} {result.name:24s} rel_err={result.rel_err:.3e} "
              f"({result.seconds:.2f}s)")
    if failures:
        raise NumericError(f"{failures} gradient check(s) failed")
    print(f"all {len(names)} gradient checks passed")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "extract": cmd_extract,
    "score": cmd_score,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("no command given; see --help")
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SpkfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
