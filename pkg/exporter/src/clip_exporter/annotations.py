"""Parsers for the two supported annotation layouts.

Both layouts are JSON objects with an ``images`` list ({id, file_name,
width, height}) and an ``annotations`` list. Vocabulary annotations carry a
COCO-convention box ([x, y, w, h] in pixels), one positive ``caption``, and
a ``neg_captions`` list; pair annotations carry just ``caption``. Boxes are
validated against the declared image size here, and again against the
decoded image at crop time.
"""

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import AnnotationError


@dataclass(frozen=True)
class ImageInfo:
    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float


@dataclass(frozen=True)
class VocabAnnotation:
    id: int
    image_id: int
    box: Box
    caption: str
    neg_captions: tuple[str, ...]


@dataclass(frozen=True)
class PairAnnotation:
    id: int
    image_id: int
    caption: str


def _load_document(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"{path}: cannot parse annotations: {exc}") from exc
    if not isinstance(raw, dict):
        raise AnnotationError(f"{path}: annotation file must be a JSON object")
    for key in ("images", "annotations"):
        if not isinstance(raw.get(key), list):
            raise AnnotationError(f"{path}: missing '{key}' list")
    return raw


def _field(record: dict, key: str, where: str):
    if key not in record:
        raise AnnotationError(f"{where}: missing '{key}'")
    return record[key]


def _parse_images(raw: dict, path) -> dict[int, ImageInfo]:
    images: dict[int, ImageInfo] = {}
    for rec in raw["images"]:
        where = f"{path}: image entry {rec.get('id', '?')}"
        info = ImageInfo(
            id=int(_field(rec, "id", where)),
            file_name=str(_field(rec, "file_name", where)),
            width=int(_field(rec, "width", where)),
            height=int(_field(rec, "height", where)))
        if info.width <= 0 or info.height <= 0:
            raise AnnotationError(f"{where}: non-positive image size")
        if info.id in images:
            raise AnnotationError(f"{path}: duplicate image id {info.id}")
        images[info.id] = info
    return images


def _parse_box(rec: dict, image: ImageInfo, where: str) -> Box:
    raw = _field(rec, "bbox", where)
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise AnnotationError(f"{where}: bbox must be [x, y, w, h]")
    box = Box(*(float(v) for v in raw))
    if box.w <= 0 or box.h <= 0:
        raise AnnotationError(f"{where}: box has non-positive size")
    if box.x < 0 or box.y < 0 or box.x + box.w > image.width or box.y + box.h > image.height:
        raise AnnotationError(
            f"{where}: box [{box.x}, {box.y}, {box.w}, {box.h}] exceeds "
            f"image bounds {image.width}x{image.height}")
    return box


def _caption(rec: dict, where: str) -> str:
    text = str(_field(rec, "caption", where))
    if not text.strip():
        raise AnnotationError(f"{where}: empty caption")
    return text


def load_vocab_annotations(path) -> tuple[dict[int, ImageInfo], list[VocabAnnotation]]:
    """Parse object boxes with positive/negative caption vocabularies."""
    raw = _load_document(path)
    images = _parse_images(raw, path)
    out = []
    seen = set()
    for rec in raw["annotations"]:
        where = f"{path}: annotation {rec.get('id', '?')}"
        ann_id = int(_field(rec, "id", where))
        if ann_id in seen:
            raise AnnotationError(f"{path}: duplicate annotation id {ann_id}")
        seen.add(ann_id)
        image_id = int(_field(rec, "image_id", where))
        if image_id not in images:
            raise AnnotationError(f"{where}: unknown image id {image_id}")
        negs = _field(rec, "neg_captions", where)
        if not isinstance(negs, list) or not negs:
            raise AnnotationError(f"{where}: 'neg_captions' must be a non-empty list")
        caption = _caption(rec, where)
        neg_tuple = tuple(str(n) for n in negs)
        for n in neg_tuple:
            if not n.strip():
                raise AnnotationError(f"{where}: empty negative caption")
        out.append(VocabAnnotation(
            id=ann_id, image_id=image_id,
            box=_parse_box(rec, images[image_id], where),
            caption=caption, neg_captions=neg_tuple))
    return images, out


def load_pair_annotations(path) -> tuple[dict[int, ImageInfo], list[PairAnnotation]]:
    """Parse full-image caption pairs."""
    raw = _load_document(path)
    images = _parse_images(raw, path)
    out = []
    seen = set()
    for rec in raw["annotations"]:
        where = f"{path}: annotation {rec.get('id', '?')}"
        ann_id = int(_field(rec, "id", where))
        if ann_id in seen:
            raise AnnotationError(f"{path}: duplicate annotation id {ann_id}")
        seen.add(ann_id)
        image_id = int(_field(rec, "image_id", where))
        if image_id not in images:
            raise AnnotationError(f"{where}: unknown image id {image_id}")
        out.append(PairAnnotation(id=ann_id, image_id=image_id,
                                  caption=_caption(rec, where)))
    return images, out
