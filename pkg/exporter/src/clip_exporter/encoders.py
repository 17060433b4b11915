"""Embedding encoders behind a tiny protocol.

`ClipEncoder` wraps a transformers dual encoder (torch and transformers are
imported lazily, so the rest of the package works without them).
`HashEncoder` is a weights-free stand-in that turns content digests into
seeded Gaussian vectors: useless for retrieval quality, but deterministic
across runs and platforms, which makes it the right tool for pipeline
dry-runs and tests.
"""

import hashlib
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from PIL import Image

from .errors import ExportError


@runtime_checkable
class Encoder(Protocol):
    name: str
    dim: int

    def encode_images(self, images: Sequence[Image.Image]) -> np.ndarray: ...

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray: ...


class HashEncoder:
    """Deterministic pseudo-embeddings derived from content digests."""

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ExportError("encoder dim must be >= 1")
        self.name = f"hash-{dim}"
        self.dim = dim

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.blake2b(payload, digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim).astype(np.float32)

    def encode_images(self, images: Sequence[Image.Image]) -> np.ndarray:
        rows = [self._vector(f"img:{im.width}x{im.height}:".encode() + im.tobytes())
                for im in images]
        return np.stack(rows) if rows else np.zeros((0, self.dim), dtype=np.float32)

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = [self._vector(b"txt:" + t.encode("utf-8")) for t in texts]
        return np.stack(rows) if rows else np.zeros((0, self.dim), dtype=np.float32)


class ClipEncoder:
    """transformers CLIP-style dual encoder running deterministic inference."""

    def __init__(self, model_id: str, device: str = "cpu", batch_size: int = 16):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ExportError(
                "the clip encoder needs torch and transformers installed "
                "(pip install 'clip-exporter[clip]')") from exc
        if batch_size < 1:
            raise ExportError("batch size must be >= 1")
        self._torch = torch
        self._model = CLIPModel.from_pretrained(model_id).eval().to(device)
        self._processor = CLIPProcessor.from_pretrained(model_id)
        self._device = device
        self._batch_size = batch_size
        self.name = model_id
        self.dim = int(self._model.config.projection_dim)

    def _batches(self, items):
        for start in range(0, len(items), self._batch_size):
            yield items[start:start + self._batch_size]

    def encode_images(self, images: Sequence[Image.Image]) -> np.ndarray:
        rows = []
        with self._torch.no_grad():
            for batch in self._batches(list(images)):
                inputs = self._processor(images=batch, return_tensors="pt").to(self._device)
                rows.append(self._model.get_image_features(**inputs).cpu().numpy())
        return (np.concatenate(rows).astype(np.float32) if rows
                else np.zeros((0, self.dim), dtype=np.float32))

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        with self._torch.no_grad():
            for batch in self._batches(list(texts)):
                inputs = self._processor(text=batch, return_tensors="pt",
                                         padding=True, truncation=True).to(self._device)
                rows.append(self._model.get_text_features(**inputs).cpu().numpy())
        return (np.concatenate(rows).astype(np.float32) if rows
                else np.zeros((0, self.dim), dtype=np.float32))
