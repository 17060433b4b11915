"""Command-line interface: generate data, train heads, evaluate and report.

Exit codes are a stable contract: 0 on success, 1 for runtime or data
errors (unreadable files, mismatched datasets, empty splits), 2 for
usage errors caught at the flag level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .errors import CheckpointError, FgmatchError, UsageError
from .evaluator import (
    EvalReport,
    build_report,
    emit_report,
    evaluate_retrieval,
    evaluate_vocab,
    head_digest,
)
from .heads import TRAINABLE_KINDS, HeadKind, init_head
from .store import coarse_digest, load_coarse, load_vocab, vocab_digest
from .synth import SynthConfig, generate, write_dataset
from .trainer import TrainConfig, finetune, load_checkpoint, save_checkpoint, warmup

ALL_KINDS = tuple(k.value for k in HeadKind)
TRAINABLE = tuple(k.value for k in TRAINABLE_KINDS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgmatch",
        description="train and evaluate similarity heads over frozen embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--dim", type=int, default=64)
    p_synth.add_argument("--categories", type=int, default=8)
    p_synth.add_argument("--attributes", type=int, default=16)
    p_synth.add_argument("--epsilon", type=float, default=0.05)
    p_synth.add_argument("--noise", type=float, default=0.01,
                         help="expected norm of the isotropic noise")
    p_synth.add_argument("--jitter", type=float, default=0.08,
                         help="extra caption noise per category direction")
    p_synth.add_argument("--negatives", type=int, default=10)
    p_synth.add_argument("--train-items", type=int, default=4000)
    p_synth.add_argument("--eval-items", type=int, default=1000)
    p_synth.add_argument("--coarse-train", type=int, default=400)
    p_synth.add_argument("--coarse-test", type=int, default=200)
    p_synth.add_argument("--captions", type=int, default=5,
                         help="coarse captions per image")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(fn=cmd_synth, parser=p_synth)

    p_train = sub.add_parser("train", help="train a similarity head")
    p_train.add_argument("--stage", required=True, choices=("warmup", "finetune"))
    p_train.add_argument("--manifest", required=True,
                         help="coarse manifest for warmup, vocabulary manifest for finetune")
    p_train.add_argument("--head", choices=TRAINABLE)
    p_train.add_argument("--from", dest="from_ckpt", metavar="CKPT",
                         help="checkpoint to continue from (head kind is preserved)")
    p_train.add_argument("--out", help="checkpoint path (default: <stage>.ckpt)")
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--margin", type=float)
    p_train.add_argument("--batch-size", type=int, default=64)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--hidden", type=int, default=512)
    p_train.add_argument("--attn-heads", type=int, default=64)
    p_train.add_argument("--no-normalize", action="store_true",
                         help="score raw embeddings instead of unit vectors")
    p_train.set_defaults(fn=cmd_train, parser=p_train)

    p_eval = sub.add_parser("eval", help="evaluate a head and emit a report")
    p_eval.add_argument("--head", choices=ALL_KINDS)
    p_eval.add_argument("--checkpoint", help="trained head to evaluate")
    p_eval.add_argument("--vocab", action="append", default=[],
                        help="vocabulary manifest (repeatable)")
    p_eval.add_argument("--coarse", help="coarse manifest for retrieval metrics")
    p_eval.add_argument("--baseline", help="earlier report JSON to diff against")
    p_eval.add_argument("--out", default="report.json", help="report JSON path")
    p_eval.add_argument("--hidden", type=int, default=512)
    p_eval.add_argument("--attn-heads", type=int, default=64)
    p_eval.add_argument("--no-normalize", action="store_true")
    p_eval.set_defaults(fn=cmd_eval, parser=p_eval)
    return parser


def cmd_synth(args) -> int:
    config = SynthConfig(
        dim=args.dim, n_categories=args.categories, n_attributes=args.attributes,
        epsilon=args.epsilon, noise=args.noise, category_jitter=args.jitter,
        n_negatives=args.negatives,
        n_train=args.train_items, n_eval=args.eval_items,
        n_coarse_train=args.coarse_train, n_coarse_test=args.coarse_test,
        captions_per_image=args.captions, seed=args.seed)
    paths = write_dataset(generate(config), args.out)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


def _stage_config(args) -> TrainConfig:
    overrides = {k: v for k, v in (("lr", args.lr), ("epochs", args.epochs),
                                   ("margin", args.margin)) if v is not None}
    overrides.update(batch_size=args.batch_size, seed=args.seed,
                     normalize_inputs=not args.no_normalize)
    factory = TrainConfig.warmup if args.stage == "warmup" else TrainConfig.finetune
    return factory(**overrides)


def cmd_train(args) -> int:
    if not args.head and not args.from_ckpt:
        args.parser.error("one of --head or --from is required")
    config = _stage_config(args)
    if args.stage == "warmup":
        dataset, images, texts = load_coarse(args.manifest)
    else:
        dataset, images, texts = load_vocab(args.manifest)
    if args.from_ckpt:
        head, _ = load_checkpoint(args.from_ckpt)
        if args.head and head.kind.value != args.head:
            raise CheckpointError(
                f"checkpoint holds a {head.kind.value} head, not {args.head}")
    else:
        head = init_head(HeadKind(args.head), images.dim, hidden=args.hidden,
                         n_heads=args.attn_heads, seed=args.seed)
    if head.dim != images.dim:
        raise UsageError(f"head dim {head.dim} does not match table dim {images.dim}")
    run = warmup if args.stage == "warmup" else finetune
    head, history, state = run(config, dataset, (images, texts), head)
    out = Path(args.out if args.out else f"{args.stage}.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, head, state)
    history_path = out.with_suffix(".history.jsonl")
    history.write(history_path)
    config_path = out.with_suffix(".config.json")
    resolved = config.to_dict()
    resolved.update(command="train", head=head.kind.value, dim=head.dim,
                    hidden=head.hidden, n_heads=head.n_heads,
                    manifest=str(args.manifest),
                    resumed_from=str(args.from_ckpt) if args.from_ckpt else None)
    config_path.write_text(json.dumps(resolved, indent=2) + "\n", encoding="utf-8")
    for record in history.records:
        print(f"epoch {record.epoch:3d}  {record.stage}  "
              f"mean_loss {record.mean_loss:.6f}  {record.seconds:.2f}s")
    print(f"checkpoint: {out}")
    print(f"history: {history_path}")
    return 0


def cmd_eval(args) -> int:
    if not args.head and not args.checkpoint:
        args.parser.error("one of --head or --checkpoint is required")
    if not args.vocab and not args.coarse:
        args.parser.error("nothing to evaluate: pass --vocab and/or --coarse")
    normalize = not args.no_normalize

    head = None
    if args.checkpoint:
        head, _ = load_checkpoint(args.checkpoint)
        if args.head and head.kind.value != args.head:
            raise CheckpointError(
                f"checkpoint holds a {head.kind.value} head, not {args.head}")

    vocab_results = []
    digests: dict[str, str] = {}
    seen = set()
    for manifest in args.vocab:
        vocab, images, texts = load_vocab(manifest)
        if head is None:
            head = init_head(HeadKind(args.head), images.dim, hidden=args.hidden,
                             n_heads=args.attn_heads, seed=0)
        if vocab.benchmark in seen:
            raise UsageError(f"benchmark '{vocab.benchmark}' given more than once")
        seen.add(vocab.benchmark)
        vocab_results.append(evaluate_vocab(head, vocab, (images, texts), normalize))
        digests[f"vocab:{vocab.benchmark}"] = vocab_digest(vocab, images, texts)

    retrieval = None
    if args.coarse:
        pairs, images, texts = load_coarse(args.coarse)
        if head is None:
            head = init_head(HeadKind(args.head), images.dim, hidden=args.hidden,
                             n_heads=args.attn_heads, seed=0)
        retrieval = evaluate_retrieval(head, pairs, (images, texts), normalize=normalize)
        digests["coarse"] = coarse_digest(pairs, images, texts)

    config = {
        "command": "eval", "head": head.kind.value, "dim": head.dim,
        "hidden": head.hidden, "n_heads": head.n_heads, "normalize": normalize,
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "vocab": [str(p) for p in args.vocab],
        "coarse": str(args.coarse) if args.coarse else None,
        "head_digest": head_digest(head),
    }
    report = build_report(head, vocab_results, retrieval, digests)
    report.config_digest = hashlib.sha256(
        json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()
    baseline = EvalReport.load(args.baseline) if args.baseline else None
    table = emit_report(report, args.out, baseline=baseline, config=config)
    print(table, end="")
    print(f"report: {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2
    except FgmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main(sys.argv[1:]))
