"""Command-line entry points: extract, reembed-cosine, finetune, plus the
toy-scale helpers make-corpus and make-toy (this sandbox has no model hub,
so checkpoints are built and trained locally)."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus_gen import read_sentences, write_domain_files
from .extract import ExtractSpec, extract_embeddings, reembed_cosine
from .finetune import FineTuneConfig, finetune_recoverability
from .toy_models import make_toy_checkpoint


def _layers_arg(value: str):
    if value in ("penultimate", "all"):
        return value
    return [int(x) for x in value.split(",")]


def cmd_extract(args) -> int:
    spec = ExtractSpec(
        model_dir=args.model,
        corpus=args.corpus,
        out_dir=args.out_dir,
        layers=_layers_arg(args.layers),
        pooling_mode=args.pooling,
        domain_tag=args.domain_tag,
        max_sentences=args.max_sentences,
        max_seq_len=args.max_seq_len,
        batch_size=args.batch,
        seed=args.seed,
    )
    paths = extract_embeddings(spec)
    for p in paths:
        print(p)
    return 0


def cmd_reembed_cosine(args) -> int:
    original = read_sentences(args.original)
    recovered = read_sentences(args.recovered)
    layer = args.layer if args.layer in ("penultimate", "all") else int(args.layer)
    result = reembed_cosine(args.model, original, recovered, layer=layer,
                            max_seq_len=args.max_seq_len)
    payload = {"layer": result.layer, "mean": result.mean, "values": result.values}
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_finetune(args) -> int:
    config = FineTuneConfig(
        model_dir=args.model,
        corpus=args.corpus,
        out_dir=args.out_dir,
        steps=args.steps,
        learning_rate=args.lr,
        batch_size=args.batch,
        seed=args.seed,
        max_seq_len=args.max_seq_len,
        max_sentences=args.max_sentences,
        eval_corpus=args.eval_corpus,
        allow_large=args.allow_large,
    )
    result = finetune_recoverability(config)
    print(f"checkpoint -> {result.checkpoint}")
    print(f"before dump -> {result.before_dump}")
    print(f"after dump -> {result.after_dump}")
    return 0


def cmd_make_corpus(args) -> int:
    domains = {}
    for part in args.domains.split(","):
        name, _, seed = part.partition(":")
        domains[name] = int(seed) if seed else len(domains) * 10
    paths = write_domain_files(args.out_dir, domains,
                               n_sentences=args.sentences,
                               lexicon_seed=args.seed,
                               copy_pretrain=args.copy_pretrain)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_make_toy(args) -> int:
    path = make_toy_checkpoint(
        args.kind, args.corpus, args.out_dir, seed=args.seed, steps=args.steps,
        learning_rate=args.lr, batch_size=args.batch,
        max_seq_len=args.max_seq_len, hidden=args.hidden, layers=args.layers,
        pos_init_std=args.pos_init_std, max_sentences=args.max_sentences)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miprobe-extract",
        description="Bridge checkpoints to the embedding-dump format")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("extract", help="hidden states -> dumps, one per layer")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--corpus", required=True, help="text file, one sentence per line")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--layers", default="penultimate",
                   help='"penultimate", "all", or comma-separated indices '
                        "(0 = embedding table)")
    p.add_argument("--pooling", choices=["per_position", "mean_pooled"],
                   default="per_position")
    p.add_argument("--domain-tag", default="")
    p.add_argument("--max-sentences", type=int)
    p.add_argument("--max-seq-len", type=int, default=32)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(runner=cmd_extract)

    p = sub.add_parser("reembed-cosine",
                       help="cosine between re-embedded original/recovered text")
    p.add_argument("--model", required=True)
    p.add_argument("--original", required=True)
    p.add_argument("--recovered", required=True)
    p.add_argument("--layer", default="penultimate")
    p.add_argument("--max-seq-len", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(runner=cmd_reembed_cosine)

    p = sub.add_parser("finetune",
                       help="recoverability fine-tune with frozen final layer")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-seq-len", type=int, default=32)
    p.add_argument("--max-sentences", type=int)
    p.add_argument("--eval-corpus")
    p.add_argument("--allow-large", action="store_true",
                   help="override the toy-scale parameter guard")
    p.set_defaults(runner=cmd_finetune)

    p = sub.add_parser("make-corpus", help="synthetic multi-domain text files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--domains", default="wiki:10,news:20,reviews:30,qa:40",
                   help="name:seed pairs, comma-separated")
    p.add_argument("--sentences", type=int, default=1500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--copy-pretrain", type=int, default=0,
                   help="repeat-structured sentences mixed into pretrain.txt")
    p.set_defaults(runner=cmd_make_corpus)

    p = sub.add_parser("make-toy", help="build and train a toy checkpoint")
    p.add_argument("--kind", choices=["encoder", "decoder"], required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-seq-len", type=int, default=32)
    p.add_argument("--hidden", type=int, default=48)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--pos-init-std", type=float)
    p.add_argument("--max-sentences", type=int)
    p.set_defaults(runner=cmd_make_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.runner(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
