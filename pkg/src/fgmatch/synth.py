"""Synthetic embedding benchmark with a planted fine-grained signal.

Every vector is built from a shared orthonormal basis: a unit-scale
category code, an attribute code shrunk by epsilon, and Gaussian read
noise whose level sets the expected noise norm.  Crops and their captions
agree on category and attribute but carry independent noise, and an
item's negatives reuse the crop's category with different attributes.
Coarse captions carry the category code only.

Caption noise is anisotropic: on top of the isotropic floor, captions
get an extra Gaussian component inside the span of the category codes
(`category_jitter` per direction).  That jitter leaves dot products with
the attribute codes untouched but perturbs caption norms enough to
scramble plain cosine ranking, while any projection that zeroes the
category subspace removes it entirely, so the fine-grained signal stays
linearly decodable by construction.

Generation is a single pass over one seeded generator, so a config+seed
pair always produces byte-identical tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UsageError
from .numcore import STORE_DTYPE
from .store import (
    CoarsePairs,
    EmbeddingTable,
    VocabDataset,
    VocabItem,
    write_coarse_manifest,
    write_table,
    write_vocab_manifest,
)


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 64
    n_categories: int = 8
    n_attributes: int = 16
    epsilon: float = 0.05
    noise: float = 0.01
    category_jitter: float = 0.08
    n_negatives: int = 10
    n_train: int = 4000
    n_eval: int = 1000
    n_coarse_train: int = 400
    n_coarse_test: int = 200
    captions_per_image: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dim must be >= 1")
        if self.n_categories < 1 or self.n_attributes < 1:
            raise UsageError("need at least one category and one attribute")
        if self.n_categories + self.n_attributes > self.dim:
            raise UsageError(
                f"dim {self.dim} cannot hold {self.n_categories + self.n_attributes} "
                "orthonormal codes")
        # epsilon = 0 is allowed: it removes the fine-grained signal entirely,
        # which is the chance-level control condition.
        if not 0 <= self.epsilon < 1:
            raise UsageError("epsilon must lie in [0, 1)")
        if self.noise < 0:
            raise UsageError("noise must be nonnegative")
        if self.category_jitter < 0:
            raise UsageError("category_jitter must be nonnegative")
        if self.n_negatives < 1:
            raise UsageError("n_negatives must be >= 1")
        if self.n_attributes < self.n_negatives + 1:
            raise UsageError(
                f"{self.n_attributes} attributes cannot yield {self.n_negatives} "
                "distinct negatives plus a positive")
        if min(self.n_train, self.n_eval, self.n_coarse_train, self.n_coarse_test) < 1:
            raise UsageError("all item counts must be >= 1")
        if self.captions_per_image < 1:
            raise UsageError("captions_per_image must be >= 1")


@dataclass
class SynthDataset:
    config: SynthConfig
    images: EmbeddingTable
    texts: EmbeddingTable
    coarse_train: CoarsePairs
    coarse_test: CoarsePairs
    vocab_train: VocabDataset
    vocab_eval: VocabDataset
    category_codes: np.ndarray
    attribute_codes: np.ndarray


def make_codes(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal category and attribute codes from a seeded QR factorization."""
    rng = np.random.default_rng(config.seed)
    raw = rng.standard_normal((config.dim, config.n_categories + config.n_attributes))
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))[None, :]  # canonical sign, QR is otherwise ambiguous
    return (np.ascontiguousarray(q[:, :config.n_categories].T),
            np.ascontiguousarray(q[:, config.n_categories:].T))


def _vector(config: SynthConfig, cats, attrs, c: int, a: int | None, rng,
            jitter: bool) -> np.ndarray:
    """One embedding; `noise` is the expected norm of the isotropic part,
    and captions (jitter=True) get the extra category-subspace component."""
    x = cats[c].copy()
    if a is not None:
        x = x + config.epsilon * attrs[a]
    x = x + (config.noise / np.sqrt(config.dim)) * rng.standard_normal(config.dim)
    if jitter and config.category_jitter > 0:
        x = x + cats.T @ (config.category_jitter
                          * rng.standard_normal(config.n_categories))
    return x.astype(STORE_DTYPE)


def generate(config: SynthConfig) -> SynthDataset:
    cats, attrs = make_codes(config)
    rng = np.random.default_rng(config.seed + 1)  # code basis drawn separately
    images: dict[str, np.ndarray] = {}
    texts: dict[str, np.ndarray] = {}

    def coarse_split(split: str, n_images: int) -> CoarsePairs:
        width = len(str(max(n_images - 1, 1)))
        items = []
        for i in range(n_images):
            c = int(rng.integers(config.n_categories))
            a = int(rng.integers(config.n_attributes))
            img_id = f"coarse-{split}-img-{i:0{width}d}"
            images[img_id] = _vector(config, cats, attrs, c, a, rng, jitter=False)
            caps = []
            for k in range(config.captions_per_image):
                cap_id = f"coarse-{split}-cap-{i:0{width}d}-{k}"
                texts[cap_id] = _vector(config, cats, attrs, c, None, rng, jitter=True)
                caps.append(cap_id)
            items.append((img_id, tuple(caps)))
        return CoarsePairs(split=split, items=items)

    def vocab_split(split: str, n_items: int) -> VocabDataset:
        width = len(str(max(n_items - 1, 1)))
        entries = []
        for i in range(n_items):
            c = int(rng.integers(config.n_categories))
            chosen = rng.choice(config.n_attributes, size=config.n_negatives + 1,
                                replace=False)
            crop_id = f"vocab-{split}-crop-{i:0{width}d}"
            pos_id = f"vocab-{split}-pos-{i:0{width}d}"
            images[crop_id] = _vector(config, cats, attrs, c, int(chosen[0]),
                                      rng, jitter=False)
            texts[pos_id] = _vector(config, cats, attrs, c, int(chosen[0]),
                                    rng, jitter=True)
            neg_ids = []
            for j, a in enumerate(chosen[1:]):
                neg_id = f"vocab-{split}-neg-{i:0{width}d}-{j:02d}"
                texts[neg_id] = _vector(config, cats, attrs, c, int(a),
                                        rng, jitter=True)
                neg_ids.append(neg_id)
            entries.append(VocabItem(crop_id=crop_id, positive_id=pos_id,
                                     negative_ids=tuple(neg_ids)))
        return VocabDataset(benchmark="custom", n_negatives=config.n_negatives,
                            items=entries)

    coarse_train = coarse_split("train", config.n_coarse_train)
    coarse_test = coarse_split("test", config.n_coarse_test)
    vocab_train = vocab_split("train", config.n_train)
    vocab_eval = vocab_split("eval", config.n_eval)
    return SynthDataset(
        config=config,
        images=EmbeddingTable(dim=config.dim, entries=images),
        texts=EmbeddingTable(dim=config.dim, entries=texts),
        coarse_train=coarse_train, coarse_test=coarse_test,
        vocab_train=vocab_train, vocab_eval=vocab_eval,
        category_codes=cats, attribute_codes=attrs)


def write_dataset(dataset: SynthDataset, outdir) -> dict[str, Path]:
    """Write tables and manifests under `outdir`; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "images": outdir / "images.fgeb",
        "texts": outdir / "texts.fgeb",
        "coarse_train": outdir / "coarse_train.json",
        "coarse_test": outdir / "coarse_test.json",
        "vocab_train": outdir / "vocab_train.json",
        "vocab_eval": outdir / "vocab_eval.json",
    }
    write_table(dataset.images, paths["images"])
    write_table(dataset.texts, paths["texts"])
    dim = dataset.config.dim
    write_coarse_manifest(paths["coarse_train"], dim, "images.fgeb", "texts.fgeb",
                          dataset.coarse_train)
    write_coarse_manifest(paths["coarse_test"], dim, "images.fgeb", "texts.fgeb",
                          dataset.coarse_test)
    write_vocab_manifest(paths["vocab_train"], dim, "images.fgeb", "texts.fgeb",
                         dataset.vocab_train)
    write_vocab_manifest(paths["vocab_eval"], dim, "images.fgeb", "texts.fgeb",
                         dataset.vocab_eval)
    return paths


def category_removal_projection(dataset: SynthDataset) -> np.ndarray:
    """Square matrix that zeroes the category subspace; float32 storage.

    Used as handcrafted weights for a linear head: after projection the
    attribute code is the dominant signal, so cosine ranks the true
    caption first almost always.  Serves as the analytic witness that the
    planted signal is linearly decodable.
    """
    c = dataset.category_codes.astype(np.float64)
    proj = np.eye(dataset.config.dim) - c.T @ c
    return proj.astype(STORE_DTYPE)
