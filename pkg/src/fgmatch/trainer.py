"""Two-stage training of similarity heads on frozen embeddings.

Warm-up runs the bidirectional in-batch triplet loss over coarse
image-caption pairs (default lr 5e-4, margin 0.2, 10 epochs); fine-tuning
runs the vocabulary triplet loss over fine-grained items (default lr 1e-5,
margin 0.05, 10 epochs).  Adam with bias correction, no schedule, no
weight decay.  Everything is deterministic under (config, datasets, seed):
parameters and moments are stored float32, updates computed in float64,
and the batch samplers draw from a fresh seeded generator per call.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, NonFiniteGradientError, UsageError
from .heads import Head, HeadKind, head_kind, param_nodes, param_shapes, score_matrix_nodes, score_pairs_nodes
from .losses import coarse_triplet_loss_node, finegrained_triplet_loss_node
from .numcore import STORE_DTYPE
from .store import CoarsePairs, VocabDataset, embedding_matrix

CKPT_MAGIC = b"FGCK"
CKPT_VERSION = 1

WARMUP_DEFAULTS = dict(lr=5e-4, margin=0.2, epochs=10)
FINETUNE_DEFAULTS = dict(lr=1e-5, margin=0.05, epochs=10)


@dataclass
class TrainConfig:
    stage: str
    lr: float
    epochs: int
    margin: float
    batch_size: int = 64
    seed: int = 0
    normalize_inputs: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.stage not in ("warmup", "finetune"):
            raise UsageError(f"unknown stage '{self.stage}'")
        if self.lr <= 0:
            raise UsageError("lr must be positive")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.margin < 0:
            raise UsageError("margin must be nonnegative")
        if self.batch_size < 2 and self.stage == "warmup":
            raise UsageError("warm-up needs batch_size >= 2")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.seed < 0:
            raise UsageError("seed must be nonnegative")

    @classmethod
    def warmup(cls, **overrides) -> "TrainConfig":
        kw = dict(WARMUP_DEFAULTS)
        kw.update(overrides)
        return cls(stage="warmup", **kw)

    @classmethod
    def finetune(cls, **overrides) -> "TrainConfig":
        kw = dict(FINETUNE_DEFAULTS)
        kw.update(overrides)
        return cls(stage="finetune", **kw)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage, "lr": self.lr, "epochs": self.epochs,
            "margin": self.margin, "batch_size": self.batch_size, "seed": self.seed,
            "normalize_inputs": self.normalize_inputs,
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
        }


@dataclass
class AdamState:
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_head(cls, head: Head, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> "AdamState":
        return cls(step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m={k: np.zeros_like(p) for k, p in head.params.items()},
                   v={k: np.zeros_like(p) for k, p in head.params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; float64 math, float32 storage."""
    state.step += 1
    t = state.step
    new_params = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise UsageError(f"gradient for '{name}' has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        m = state.beta1 * state.m[name].astype(np.float64) + (1 - state.beta1) * g
        v = state.beta2 * state.v[name].astype(np.float64) + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        updated = p.astype(np.float64) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name] = m.astype(STORE_DTYPE)
        state.v[name] = v.astype(STORE_DTYPE)
        new_params[name] = updated.astype(STORE_DTYPE)
    return new_params, state


_STAGE_TAGS = {"warmup": 0, "finetune": 1}


def _epoch_rng(seed: int, stage: str, epoch: int) -> np.random.Generator:
    """Batch order depends only on (seed, stage, epoch), never on how many
    epochs ran before, so training resumed from a checkpoint walks the same
    trajectory as an uninterrupted run."""
    return np.random.default_rng(np.random.SeedSequence((seed, _STAGE_TAGS[stage], epoch)))


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    mean_loss: float
    raw_loss: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def jsonl(self) -> str:
        lines = [json.dumps({"epoch": r.epoch, "stage": r.stage,
                             "mean_loss": r.mean_loss, "seconds": round(r.seconds, 6)})
                 for r in self.records]
        return "\n".join(lines) + ("\n" if lines else "")

    def write(self, path) -> None:
        Path(path).write_text(self.jsonl(), encoding="utf-8")

    @property
    def mean_losses(self) -> list[float]:
        return [r.mean_loss for r in self.records]


def _coarse_epoch_batches(pairs: CoarsePairs, rng: np.random.Generator,
                          batch_size: int) -> list[tuple[list[int], list[int]]]:
    """Batches of (image rows, caption rows) with no image repeated inside a
    batch: caption slot s of every image forms one pool, pools are shuffled
    and chopped.  Singleton leftovers are dropped (the coarse loss needs
    at least two anchors)."""
    per_image = [rng.permutation(len(caps)) for _, caps in pairs.items]
    cap_offsets = np.cumsum([0] + [len(caps) for _, caps in pairs.items])
    max_caps = max(len(caps) for _, caps in pairs.items)
    batches = []
    for slot in range(max_caps):
        pool = [(i, int(cap_offsets[i] + per_image[i][slot]))
                for i, (_, caps) in enumerate(pairs.items) if slot < len(caps)]
        order = rng.permutation(len(pool))
        for start in range(0, len(pool), batch_size):
            chunk = [pool[j] for j in order[start:start + batch_size]]
            if len(chunk) < 2:
                continue
            batches.append(([c[0] for c in chunk], [c[1] for c in chunk]))
    return batches


def warmup(config: TrainConfig, pairs: CoarsePairs, tables, head: Head,
           state: AdamState | None = None,
           start_epoch: int = 1) -> tuple[Head, TrainHistory, AdamState]:
    """Stage one: bidirectional in-batch triplet loss on coarse pairs."""
    if config.stage != "warmup":
        raise UsageError(f"warmup called with stage '{config.stage}'")
    if not head.trainable:
        raise UsageError("cosine baseline has no trainable parameters")
    if start_epoch < 1:
        raise UsageError("start_epoch must be >= 1")
    images, texts = tables
    image_ids = [img for img, _ in pairs.items]
    v_all = embedding_matrix(images, image_ids, config.normalize_inputs)
    t_all = embedding_matrix(texts, pairs.caption_ids(), config.normalize_inputs)
    if state is None:
        state = AdamState.for_head(head, config.lr, config.beta1, config.beta2, config.eps)
    history = TrainHistory()
    for epoch in range(start_epoch, config.epochs + 1):
        started = time.perf_counter()
        rng = _epoch_rng(config.seed, "warmup", epoch)
        raw = 0.0
        n_items = 0
        for img_rows, cap_rows in _coarse_epoch_batches(pairs, rng, config.batch_size):
            pn = param_nodes(head)
            scores = score_matrix_nodes(head, pn, v_all[img_rows], t_all[cap_rows])
            loss = coarse_triplet_loss_node(scores, config.margin)
            grads = dict(zip(pn.keys(), ad.gradients(loss, list(pn.values()))))
            new_params, state = adam_step(head.params, grads, state)
            head = head.with_params(new_params)
            raw += float(loss.value)
            n_items += len(img_rows)
        history.records.append(EpochRecord(epoch, "warmup", raw / max(n_items, 1),
                                           raw, time.perf_counter() - started))
    return head, history, state


def finetune(config: TrainConfig, vocab: VocabDataset, tables, head: Head,
             state: AdamState | None = None,
             start_epoch: int = 1) -> tuple[Head, TrainHistory, AdamState]:
    """Stage two: vocabulary triplet loss, image anchors its own captions."""
    if config.stage != "finetune":
        raise UsageError(f"finetune called with stage '{config.stage}'")
    if not head.trainable:
        raise UsageError("cosine baseline has no trainable parameters")
    if start_epoch < 1:
        raise UsageError("start_epoch must be >= 1")
    images, texts = tables
    n = vocab.n_negatives
    crop_rows = embedding_matrix(images, [it.crop_id for it in vocab.items],
                                 config.normalize_inputs)
    cap_ids = []
    for it in vocab.items:
        cap_ids.append(it.positive_id)
        cap_ids.extend(it.negative_ids)
    cap_rows = embedding_matrix(texts, cap_ids, config.normalize_inputs)  # (B*(N+1), d)
    if state is None:
        state = AdamState.for_head(head, config.lr, config.beta1, config.beta2, config.eps)
    history = TrainHistory()
    for epoch in range(start_epoch, config.epochs + 1):
        started = time.perf_counter()
        rng = _epoch_rng(config.seed, "finetune", epoch)
        raw = 0.0
        n_items = 0
        order = rng.permutation(len(vocab.items))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            b = len(idx)
            v_pairs = np.repeat(crop_rows[idx], n + 1, axis=0)
            cap_idx = (idx[:, None] * (n + 1) + np.arange(n + 1)[None, :]).ravel()
            t_pairs = cap_rows[cap_idx]
            pn = param_nodes(head)
            flat = score_pairs_nodes(head, pn, v_pairs, t_pairs)
            grid = ad.reshape(flat, (b, n + 1))
            pos = ad.take(grid, (slice(None), 0))
            negs = ad.take(grid, (slice(None), slice(1, None)))
            loss = finegrained_triplet_loss_node(pos, negs, config.margin)
            grads = dict(zip(pn.keys(), ad.gradients(loss, list(pn.values()))))
            new_params, state = adam_step(head.params, grads, state)
            head = head.with_params(new_params)
            raw += float(loss.value)
            n_items += b
        history.records.append(EpochRecord(epoch, "finetune", raw / max(n_items, 1),
                                           raw, time.perf_counter() - started))
    return head, history, state


def _pack_array(fh, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<B", arr.ndim))
    for s in arr.shape:
        fh.write(struct.pack("<I", s))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, self.blob, self.off)
        self.off += size
        return vals

    def raw(self, size: int) -> bytes:
        if self.off + size > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.off:self.off + size]
        self.off += size
        return out

    def array(self) -> tuple[str, np.ndarray]:
        (name_len,) = self.unpack("<H")
        name = self.raw(name_len).decode("utf-8")
        (ndim,) = self.unpack("<B")
        shape = tuple(self.unpack("<" + "I" * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.raw(4 * count), dtype="<f4").reshape(shape).astype(STORE_DTYPE)
        return name, data


def save_checkpoint(path, head: Head, state: AdamState | None = None) -> None:
    """FGEB-style container: kind tag, dims, float32 parameter payloads,
    then optionally the Adam moments and step counter."""
    path = Path(path)
    order = [name for name, _ in param_shapes(head.kind, head.dim, head.hidden, head.n_heads)]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        kind = head.kind.value.encode("utf-8")
        fh.write(struct.pack("<H", len(kind)))
        fh.write(kind)
        fh.write(struct.pack("<III", head.dim, head.hidden, head.n_heads))
        fh.write(struct.pack("<Q", len(order)))
        for name in order:
            _pack_array(fh, name, head.params[name])
        fh.write(struct.pack("<B", 1 if state is not None else 0))
        if state is not None:
            fh.write(struct.pack("<Q", state.step))
            fh.write(struct.pack("<dddd", state.lr, state.beta1, state.beta2, state.eps))
            for name in order:
                _pack_array(fh, name, state.m[name])
            for name in order:
                _pack_array(fh, name, state.v[name])


def load_checkpoint(path, expect_kind: HeadKind | None = None) -> tuple[Head, AdamState | None]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    r = _Reader(blob, path)
    r.off = 4
    (version,) = r.unpack("<I")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (kind_len,) = r.unpack("<H")
    kind = head_kind(r.raw(kind_len).decode("utf-8"))
    if expect_kind is not None and kind is not expect_kind:
        raise CheckpointError(
            f"{path}: holds a {kind.value} head, expected {expect_kind.value}")
    dim, hidden, n_heads = r.unpack("<III")
    (n_params,) = r.unpack("<Q")
    params = {}
    for _ in range(n_params):
        name, arr = r.array()
        params[name] = arr
    head = Head(kind=kind, dim=dim, hidden=hidden, n_heads=n_heads, params=params)
    (has_state,) = r.unpack("<B")
    state = None
    if has_state:
        (step,) = r.unpack("<Q")
        lr, beta1, beta2, eps = r.unpack("<dddd")
        m = dict(r.array() for _ in range(n_params))
        v = dict(r.array() for _ in range(n_params))
        state = AdamState(step=step, lr=lr, beta1=beta1, beta2=beta2, eps=eps, m=m, v=v)
    if r.off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes")
    return head, state
