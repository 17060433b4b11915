"""Embedding tables, pairing datasets, and their on-disk formats.

FGEB binary layout (little-endian throughout):

    magic   4 bytes  b"FGEB"
    version u32      (currently 1)
    dim     u32
    count   u64
    then per record:
        id_len  u16   (> 0)
        id      id_len bytes, UTF-8
        vector  dim * f32

Manifests are UTF-8 JSON with keys `dim`, `image_table`, `text_table` and
either `pairs` (+`split`) for coarse image-caption data or `vocab_items`
(+`benchmark`, `n_negatives`) for fine-grained vocabularies.  Table paths
are resolved relative to the manifest file.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DuplicateIdError,
    InvalidRecordError,
    ManifestError,
    TruncatedError,
    UsageError,
    VersionError,
)
from .numcore import COMPUTE_DTYPE, STORE_DTYPE, l2_normalize_rows

MAGIC = b"FGEB"
VERSION = 1

BENCHMARKS = ("trivial", "easy", "medium", "hard", "color",
              "material", "pattern", "transparency", "custom")
# vocabulary sizes used by the named fine-grained benchmarks
BENCHMARK_NEGATIVES = {
    "trivial": 10, "easy": 10, "medium": 10, "hard": 10,
    "color": 10, "material": 10, "pattern": 7, "transparency": 2,
}


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise UsageError("embedding dim must be positive")
        frozen = {}
        for key, vec in self.entries.items():
            if not key:
                raise InvalidRecordError("empty embedding id")
            arr = np.asarray(vec, dtype=STORE_DTYPE)
            if arr.shape != (self.dim,):
                raise UsageError(f"embedding '{key}' has shape {arr.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(arr)):
                raise InvalidRecordError(f"embedding '{key}' has non-finite entries")
            if not arr.flags.c_contiguous or arr.flags.writeable:
                arr = np.array(arr, dtype=STORE_DTYPE, order="C")
                arr.setflags(write=False)
            frozen[key] = arr
        self.entries = frozen

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key):
        return key in self.entries

    def vector(self, key: str) -> np.ndarray:
        return self.entries[key]

    def equals(self, other: "EmbeddingTable") -> bool:
        """Bitwise payload equality, independent of record order."""
        if self.dim != other.dim or set(self.entries) != set(other.entries):
            return False
        return all(self.entries[k].tobytes() == other.entries[k].tobytes()
                   for k in self.entries)

    def content_digest(self) -> str:
        """Order-independent sha256 over ids and raw float payloads."""
        h = hashlib.sha256()
        h.update(struct.pack("<I", self.dim))
        for key in sorted(self.entries):
            kb = key.encode("utf-8")
            h.update(struct.pack("<H", len(kb)))
            h.update(kb)
            h.update(self.entries[key].tobytes())
        return h.hexdigest()


def write_table(table: EmbeddingTable, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, table.dim, len(table.entries)))
        for key, vec in table.entries.items():
            kb = key.encode("utf-8")
            if len(kb) > 0xFFFF:
                raise UsageError(f"id too long for format: {key[:32]}...")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def read_table(path) -> EmbeddingTable:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an FGEB file")
    if len(blob) < 20:
        raise TruncatedError(f"{path}: truncated header")
    version, dim, count = struct.unpack_from("<IIQ", blob, 4)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported FGEB version {version}")
    if dim == 0:
        raise InvalidRecordError(f"{path}: dim field is zero")
    entries: dict[str, np.ndarray] = {}
    off = 20
    rec_bytes = 4 * dim
    for i in range(count):
        if off + 2 > len(blob):
            raise TruncatedError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        if id_len == 0:
            raise InvalidRecordError(f"{path}: empty id in record {i}")
        if off + id_len + rec_bytes > len(blob):
            raise TruncatedError(f"{path}: truncated at record {i}")
        key = blob[off:off + id_len].decode("utf-8")
        off += id_len
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=off).astype(STORE_DTYPE)
        off += rec_bytes
        if key in entries:
            raise DuplicateIdError(f"{path}: duplicate id '{key}'")
        if not np.all(np.isfinite(vec)):
            raise InvalidRecordError(f"{path}: non-finite values in record '{key}'")
        vec.setflags(write=False)
        entries[key] = vec
    if off != len(blob):
        raise InvalidRecordError(f"{path}: {len(blob) - off} trailing bytes")
    table = EmbeddingTable.__new__(EmbeddingTable)
    table.dim = dim
    table.entries = entries
    return table


@dataclass
class CoarsePairs:
    split: str
    items: list[tuple[str, tuple[str, ...]]]

    def __post_init__(self):
        seen = set()
        for image_id, caps in self.items:
            if image_id in seen:
                raise ManifestError(f"duplicate image id '{image_id}' in coarse pairs")
            seen.add(image_id)
            if len(caps) < 1:
                raise ManifestError(f"image '{image_id}' has no captions")

    def caption_ids(self) -> list[str]:
        return [c for _, caps in self.items for c in caps]


@dataclass
class VocabItem:
    crop_id: str
    positive_id: str
    negative_ids: tuple[str, ...]


@dataclass
class VocabDataset:
    benchmark: str
    n_negatives: int
    items: list[VocabItem]

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ManifestError(f"unknown benchmark '{self.benchmark}' (expected one of {', '.join(BENCHMARKS)})")
        expected = BENCHMARK_NEGATIVES.get(self.benchmark, self.n_negatives)
        if self.n_negatives < 1:
            raise ManifestError("n_negatives must be >= 1")
        if expected != self.n_negatives:
            raise ManifestError(
                f"benchmark '{self.benchmark}' requires {expected} negatives, manifest says {self.n_negatives}")
        for item in self.items:
            if len(item.negative_ids) != self.n_negatives:
                raise ManifestError(
                    f"item '{item.crop_id}': {len(item.negative_ids)} negatives, dataset declares {self.n_negatives}")
            if item.positive_id in item.negative_ids:
                raise ManifestError(f"item '{item.crop_id}': positive caption listed among negatives")

    @property
    def vocab_size(self) -> int:
        return self.n_negatives + 1


def _load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot parse manifest: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    return raw, path.parent


def _resolve_tables(raw: dict, base: Path, path) -> tuple[EmbeddingTable, EmbeddingTable]:
    for key in ("dim", "image_table", "text_table"):
        if key not in raw:
            raise ManifestError(f"{path}: missing manifest key '{key}'")
    images = read_table(base / raw["image_table"])
    texts = read_table(base / raw["text_table"])
    if images.dim != raw["dim"] or texts.dim != raw["dim"]:
        raise ManifestError(
            f"{path}: dim mismatch (manifest {raw['dim']}, image table {images.dim}, text table {texts.dim})")
    return images, texts


def load_coarse(manifest_path) -> tuple[CoarsePairs, EmbeddingTable, EmbeddingTable]:
    raw, base = _load_manifest(manifest_path)
    images, texts = _resolve_tables(raw, base, manifest_path)
    if "pairs" not in raw:
        raise ManifestError(f"{manifest_path}: manifest has no 'pairs' section")
    items = []
    for entry in raw["pairs"]:
        image_id, caption_ids = entry[0], tuple(entry[1])
        if image_id not in images:
            raise ManifestError(f"{manifest_path}: image id '{image_id}' not in image table")
        for cap in caption_ids:
            if cap not in texts:
                raise ManifestError(f"{manifest_path}: caption id '{cap}' not in text table")
        items.append((image_id, caption_ids))
    pairs = CoarsePairs(split=raw.get("split", "train"), items=items)
    return pairs, images, texts


def load_vocab(manifest_path) -> tuple[VocabDataset, EmbeddingTable, EmbeddingTable]:
    raw, base = _load_manifest(manifest_path)
    images, texts = _resolve_tables(raw, base, manifest_path)
    if "vocab_items" not in raw:
        raise ManifestError(f"{manifest_path}: manifest has no 'vocab_items' section")
    if "n_negatives" not in raw:
        raise ManifestError(f"{manifest_path}: manifest has no 'n_negatives'")
    items = []
    for entry in raw["vocab_items"]:
        crop_id, pos_id, neg_ids = entry[0], entry[1], tuple(entry[2])
        if crop_id not in images:
            raise ManifestError(f"{manifest_path}: crop id '{crop_id}' not in image table")
        if pos_id not in texts:
            raise ManifestError(f"{manifest_path}: caption id '{pos_id}' not in text table")
        for neg in neg_ids:
            if neg not in texts:
                raise ManifestError(f"{manifest_path}: caption id '{neg}' not in text table")
        items.append(VocabItem(crop_id, pos_id, neg_ids))
    dataset = VocabDataset(benchmark=raw.get("benchmark", "custom"),
                           n_negatives=int(raw["n_negatives"]), items=items)
    return dataset, images, texts


def write_coarse_manifest(path, dim: int, image_table: str, text_table: str,
                          pairs: CoarsePairs) -> None:
    doc = {
        "dim": dim,
        "image_table": image_table,
        "text_table": text_table,
        "split": pairs.split,
        "pairs": [[img, list(caps)] for img, caps in pairs.items],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def write_vocab_manifest(path, dim: int, image_table: str, text_table: str,
                         vocab: VocabDataset) -> None:
    doc = {
        "dim": dim,
        "image_table": image_table,
        "text_table": text_table,
        "benchmark": vocab.benchmark,
        "n_negatives": vocab.n_negatives,
        "vocab_items": [[it.crop_id, it.positive_id, list(it.negative_ids)] for it in vocab.items],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def embedding_matrix(table: EmbeddingTable, ids, normalize: bool) -> np.ndarray:
    """Stack embeddings for `ids` into an (n, dim) float64 matrix."""
    rows = np.empty((len(ids), table.dim), dtype=COMPUTE_DTYPE)
    for i, key in enumerate(ids):
        rows[i] = table.entries[key]
    if normalize:
        rows = l2_normalize_rows(rows, names=list(ids))
    return rows


def coarse_digest(pairs: CoarsePairs, images: EmbeddingTable, texts: EmbeddingTable) -> str:
    h = hashlib.sha256()
    h.update(b"coarse|" + pairs.split.encode("utf-8"))
    h.update(json.dumps([[i, list(c)] for i, c in pairs.items]).encode("utf-8"))
    h.update(images.content_digest().encode("ascii"))
    h.update(texts.content_digest().encode("ascii"))
    return h.hexdigest()


def vocab_digest(vocab: VocabDataset, images: EmbeddingTable, texts: EmbeddingTable) -> str:
    h = hashlib.sha256()
    h.update(f"vocab|{vocab.benchmark}|{vocab.n_negatives}".encode("utf-8"))
    h.update(json.dumps([[it.crop_id, it.positive_id, list(it.negative_ids)]
                         for it in vocab.items]).encode("utf-8"))
    h.update(images.content_digest().encode("ascii"))
    h.update(texts.content_digest().encode("ascii"))
    return h.hexdigest()
