"""Run an export: annotations + images -> FGEB tables + JSON manifests.

One image table and one text table are written per job, shared by the
vocabulary manifest (box crops, positive/negative captions) and the pair
manifest (full images, their captions). Unreadable images are skipped with
a logged id and their annotations dropped; a requested section that ends up
empty fails the job. Row order follows annotation file order, so repeated
exports with the same encoder are byte-identical.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import load_pair_annotations, load_vocab_annotations
from .encoders import Encoder
from .errors import AnnotationError, ExportError, ImageError
from .fgeb import write_fgeb
from .imaging import crop_box, load_image

log = logging.getLogger("clip_exporter")

# vocabulary widths pinned by the named fine-grained benchmarks
BENCHMARK_NEGATIVES = {
    "trivial": 10, "easy": 10, "medium": 10, "hard": 10,
    "color": 10, "material": 10, "pattern": 7, "transparency": 2,
}
BENCHMARKS = (*BENCHMARK_NEGATIVES, "custom")


@dataclass
class ExportJob:
    images_dir: Path
    out_dir: Path
    vocab_path: Path | None = None
    pairs_path: Path | None = None
    benchmark: str = "custom"
    split: str = "train"
    context: float = 0.0
    normalize: bool = False

    def __post_init__(self):
        self.images_dir = Path(self.images_dir)
        self.out_dir = Path(self.out_dir)
        if self.vocab_path is None and self.pairs_path is None:
            raise ExportError("nothing to export: need vocabulary or pair annotations")
        if self.benchmark not in BENCHMARKS:
            raise ExportError(
                f"unknown benchmark '{self.benchmark}' (expected one of {', '.join(BENCHMARKS)})")
        if self.context < 0:
            raise ExportError("context margin must be nonnegative")


class _ImageCache:
    """Per-job decoded-image cache; a failed id stays failed."""

    def __init__(self, root: Path):
        self.root = root
        self._images = {}
        self._failed = set()

    def get(self, info):
        if info.id in self._failed:
            return None
        if info.id not in self._images:
            try:
                self._images[info.id] = load_image(self.root / info.file_name)
            except ImageError as exc:
                log.warning("skipping image %s (%s): %s", info.id, info.file_name, exc)
                self._failed.add(info.id)
                return None
        return self._images[info.id]


def _vocab_negative_count(annotations, path) -> int:
    counts = {len(a.neg_captions) for a in annotations}
    if len(counts) > 1:
        worst = next(a for a in annotations
                     if len(a.neg_captions) != len(annotations[0].neg_captions))
        raise AnnotationError(
            f"{path}: annotation {worst.id} has {len(worst.neg_captions)} negative "
            f"captions, annotation {annotations[0].id} has "
            f"{len(annotations[0].neg_captions)}; one manifest needs one width")
    return counts.pop()


def _normalized(rows: np.ndarray, ids, what: str) -> np.ndarray:
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    dead = np.nonzero(norms == 0)[0]
    if dead.size:
        raise ExportError(f"cannot normalize zero {what} vector '{ids[dead[0]]}'")
    return (rows.astype(np.float64) / norms[:, None]).astype(np.float32)


def run_export(job: ExportJob, encoder: Encoder) -> dict[str, Path]:
    """Execute the job; returns the written files keyed by role."""
    crop_images, crop_ids = [], []
    full_images, full_ids = [], []
    text_ids, text_strings = [], []
    vocab_items = []
    pair_items = []
    n_negatives = 0

    if job.vocab_path is not None:
        images, annotations = load_vocab_annotations(job.vocab_path)
        if not annotations:
            raise ExportError(f"{job.vocab_path}: no annotations to export")
        n_negatives = _vocab_negative_count(annotations, job.vocab_path)
        expected = BENCHMARK_NEGATIVES.get(job.benchmark, n_negatives)
        if expected != n_negatives:
            raise ExportError(
                f"benchmark '{job.benchmark}' requires {expected} negative "
                f"captions, annotations have {n_negatives}")
        cache = _ImageCache(job.images_dir)
        for ann in annotations:
            image = cache.get(images[ann.image_id])
            if image is None:
                continue
            crop_images.append(crop_box(image, ann.box, job.context))
            crop_id = f"crop-{ann.id}"
            crop_ids.append(crop_id)
            pos_id = f"cap-{ann.id}-pos"
            text_ids.append(pos_id)
            text_strings.append(ann.caption)
            neg_ids = []
            for j, neg in enumerate(ann.neg_captions):
                neg_ids.append(f"cap-{ann.id}-neg-{j:02d}")
                text_ids.append(neg_ids[-1])
                text_strings.append(neg)
            vocab_items.append([crop_id, pos_id, neg_ids])
        if not vocab_items:
            raise ExportError(
                f"{job.vocab_path}: every annotated image was unreadable; nothing exported")

    if job.pairs_path is not None:
        images, annotations = load_pair_annotations(job.pairs_path)
        if not annotations:
            raise ExportError(f"{job.pairs_path}: no annotations to export")
        by_image: dict[int, list] = {}
        for ann in annotations:
            by_image.setdefault(ann.image_id, []).append(ann)
        cache = _ImageCache(job.images_dir)
        for info in images.values():
            anns = by_image.get(info.id)
            if not anns:
                continue  # captionless images have nothing to pair
            image = cache.get(info)
            if image is None:
                continue
            img_id = f"img-{info.id}"
            full_images.append(image)
            full_ids.append(img_id)
            caps = []
            for ann in anns:
                caps.append(f"cap-{ann.id}")
                text_ids.append(caps[-1])
                text_strings.append(ann.caption)
            pair_items.append([img_id, caps])
        if not pair_items:
            raise ExportError(
                f"{job.pairs_path}: every annotated image was unreadable; nothing exported")

    image_rows = np.concatenate([
        encoder.encode_images(crop_images) if crop_images else np.zeros((0, encoder.dim), np.float32),
        encoder.encode_images(full_images) if full_images else np.zeros((0, encoder.dim), np.float32),
    ])
    image_ids = crop_ids + full_ids
    text_rows = encoder.encode_texts(text_strings)
    if image_rows.shape != (len(image_ids), encoder.dim):
        raise ExportError(f"encoder returned image shape {image_rows.shape}, "
                          f"expected ({len(image_ids)}, {encoder.dim})")
    if text_rows.shape != (len(text_ids), encoder.dim):
        raise ExportError(f"encoder returned text shape {text_rows.shape}, "
                          f"expected ({len(text_ids)}, {encoder.dim})")
    if job.normalize:
        image_rows = _normalized(image_rows, image_ids, "image")
        text_rows = _normalized(text_rows, text_ids, "text")

    job.out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    written["images"] = job.out_dir / "images.fgeb"
    write_fgeb(written["images"], encoder.dim, zip(image_ids, image_rows))
    written["texts"] = job.out_dir / "texts.fgeb"
    write_fgeb(written["texts"], encoder.dim, zip(text_ids, text_rows))

    common = {
        "dim": encoder.dim,
        "image_table": "images.fgeb",
        "text_table": "texts.fgeb",
        "model": encoder.name,
        "preprocessing": "model-default crop encoding, exact box"
                         + (f" + {job.context} context" if job.context else ""),
        "normalized": job.normalize,
    }
    if vocab_items:
        doc = dict(common, benchmark=job.benchmark, n_negatives=n_negatives,
                   vocab_items=vocab_items)
        written["vocab_manifest"] = job.out_dir / f"vocab_{job.benchmark}.json"
        written["vocab_manifest"].write_text(json.dumps(doc, indent=1) + "\n",
                                             encoding="utf-8")
    if pair_items:
        doc = dict(common, split=job.split, pairs=pair_items)
        written["pairs_manifest"] = job.out_dir / f"coarse_{job.split}.json"
        written["pairs_manifest"].write_text(json.dumps(doc, indent=1) + "\n",
                                             encoding="utf-8")
    return written
