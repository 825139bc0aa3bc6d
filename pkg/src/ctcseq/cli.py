"""Command-line entry point: synth, train, eval, decode, lm-train, ablate.

Every command validates its configuration before touching the filesystem,
writes outputs only under its --out path, and drops a fully resolved
config echo next to whatever it produces. The CTCSEQ_SEED environment
variable overrides the seed everywhere one is used.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import decoder as dec
from .config import default_config, load_config, save_config
from .ctc import Alphabet
from .data import load_dataset, normalize, read_tensor, save_dataset, synthesize
from .lm import lm_train, load_lm, save_lm
from .model import ModelConfig, load_checkpoint, motion_prior
from .training import TrainConfig, ablate, evaluate, train
from .model import Recognizer

DEFAULT_LETTERS = "abcde"


def _seed_override(seed: int) -> int:
    env = os.environ.get("CTCSEQ_SEED")
    return int(env) if env else seed


def _load_configs(path: str | None, seed_flag: int | None = None) -> dict:
    configs = load_config(path) if path else default_config()
    seed = seed_flag if seed_flag is not None else configs["train"].seed
    configs["train"] = dataclasses.replace(configs["train"], seed=_seed_override(seed))
    return configs


def _cmd_synth(args) -> int:
    configs = _load_configs(args.config, args.seed)
    alphabet = Alphabet(tuple(args.alphabet))
    seed = configs["train"].seed
    split = synthesize(seed, args.n_clips, alphabet, configs["data"])
    out = Path(args.out)
    save_dataset(split, out)
    save_config(configs, out / "config.resolved.ini")
    sizes = {name: len(clips) for name, clips in split.partitions().items()}
    print(f"wrote {args.n_clips} clips to {out} (train/dev/test = "
          f"{sizes['train']}/{sizes['dev']}/{sizes['test']}, seed {seed})")
    return 0


def _cmd_train(args) -> int:
    configs = _load_configs(args.config)
    split = load_dataset(args.data)
    model_cfg = dataclasses.replace(
        configs["model"], num_classes=len(split.alphabet.letters)
    )
    configs["model"] = model_cfg
    out = Path(args.out)
    model = Recognizer(model_cfg, seed=configs["train"].seed)
    result = train(model, split, configs["train"], out_dir=out)
    save_config(configs, out / "config.resolved.ini")
    print(f"best dev accuracy {result.best_dev_acc:.4f} at epoch {result.best_epoch}; "
          f"checkpoint at {out / 'best.ckpt'}")
    return 0


def _eval_report(args, partition: str):
    model = load_checkpoint(args.ckpt)
    split = load_dataset(args.data)
    clips = split.partitions()[partition]
    if not clips:
        raise ValueError(f"no clips in partition {partition!r}")
    lm = load_lm(args.lm) if args.lm else None
    if args.decoder == "beam-lm" and lm is None:
        raise ValueError("--decoder beam-lm requires --lm")
    return evaluate(
        model, clips, decoder=args.decoder, beam_width=args.beam_width,
        lm=lm, alpha=args.alpha, alphabet=split.alphabet, prefix=partition,
    )


def _cmd_eval(args) -> int:
    report = _eval_report(args, args.split)
    print(report.to_table(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(report.to_lines(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    return 0


def _cmd_decode(args) -> int:
    model = load_checkpoint(args.ckpt)
    frames = read_tensor(args.clip)
    letters = Alphabet(tuple(args.alphabet))
    if args.priors:
        priors = read_tensor(args.priors)
    else:
        priors = motion_prior(frames, model.cfg.feat_grid)
    dist = model.forward(normalize(frames), priors=priors)
    if args.decoder == "greedy":
        pred = dec.greedy_decode(dist)
    elif args.decoder == "beam":
        pred = dec.beam_decode(dist, args.beam_width)
    else:
        lm = load_lm(args.lm)
        pred = dec.lm_fused_beam_decode(dist, args.beam_width, lm, args.alpha, letters)
    print(letters.decode(pred))
    return 0


def _cmd_lm_train(args) -> int:
    lines = [ln.strip() for ln in Path(args.corpus).read_text(encoding="utf-8").splitlines()]
    corpus = [ln for ln in lines if ln]
    model = lm_train(corpus, order=args.order, smoothing_alpha=args.smoothing_alpha)
    save_lm(model, args.out)
    print(f"trained order-{args.order} model on {len(corpus)} sequences -> {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    configs = _load_configs(args.config)
    split = load_dataset(args.data)
    model_cfg = dataclasses.replace(
        configs["model"], num_classes=len(split.alphabet.letters)
    )
    table = ablate(split, configs["train"], model_cfg)
    print(table.to_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.txt").write_text(table.to_text(), encoding="utf-8")
        configs["model"] = model_cfg
        save_config(configs, out / "config.resolved.ini")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctcseq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-clips", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--alphabet", default=DEFAULT_LETTERS)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="train a recognizer")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decoder", choices=("greedy", "beam", "beam-lm"), default="greedy")
    p.add_argument("--beam-width", type=int, default=20)
    p.add_argument("--lm", default=None)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--split", choices=("train", "dev", "test"), default="dev")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("decode", help="decode a single clip container")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--priors", default=None, help="optional precomputed prior maps (tensor container)")
    p.add_argument("--decoder", choices=("greedy", "beam", "beam-lm"), default="greedy")
    p.add_argument("--beam-width", type=int, default=20)
    p.add_argument("--lm", default=None)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--alphabet", default=DEFAULT_LETTERS)
    p.set_defaults(handler=_cmd_decode)

    p = sub.add_parser("lm-train", help="train a character n-gram model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--smoothing-alpha", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_lm_train)

    p = sub.add_parser("ablate", help="run the loss/augmentation ablation")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
