"""clip-export: embed annotated crops/captions and write FGEB datasets.

Exit codes: 0 success, 1 runtime failure (bad annotations, unreadable
output directory, every image missing, model failures), 2 bad flags.
"""

import argparse
import logging
import sys

from .encoders import ClipEncoder, HashEncoder
from .errors import ExporterError
from .export import BENCHMARKS, ExportJob, run_export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-export",
        description="Embed annotated image crops and captions into FGEB "
                    "tables plus JSON manifests.")
    parser.add_argument("--images-dir", required=True,
                        help="directory the annotation file_names are relative to")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--vocab",
                        help="annotations with boxes and positive/negative captions")
    parser.add_argument("--pairs", help="annotations with full-image captions")
    parser.add_argument("--benchmark", default="custom", choices=BENCHMARKS,
                        help="vocabulary benchmark name recorded in the manifest")
    parser.add_argument("--split", default="train",
                        help="split name recorded in the pair manifest")
    parser.add_argument("--context", type=float, default=0.0,
                        help="grow each box by this fraction per side before cropping")
    parser.add_argument("--normalize", action="store_true",
                        help="L2-normalize embeddings before writing "
                             "(default: raw encoder output)")
    parser.add_argument("--model", default="openai/clip-vit-base-patch16",
                        help="transformers model id for --encoder clip")
    parser.add_argument("--encoder", default="clip", choices=("clip", "hash"),
                        help="'hash' writes deterministic pseudo-embeddings "
                             "for plumbing dry-runs without model weights")
    parser.add_argument("--dim", type=int, default=64,
                        help="embedding width for --encoder hash")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.vocab and not args.pairs:
        parser.error("at least one of --vocab or --pairs is required")
    logging.basicConfig(format="%(levelname)s %(message)s")
    try:
        if args.encoder == "hash":
            encoder = HashEncoder(dim=args.dim)
        else:
            encoder = ClipEncoder(args.model, device=args.device,
                                  batch_size=args.batch_size)
        job = ExportJob(images_dir=args.images_dir, out_dir=args.out,
                        vocab_path=args.vocab, pairs_path=args.pairs,
                        benchmark=args.benchmark, split=args.split,
                        context=args.context, normalize=args.normalize)
        written = run_export(job, encoder)
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for role in sorted(written):
        print(f"{role}: {written[role]}")
    return 0


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
