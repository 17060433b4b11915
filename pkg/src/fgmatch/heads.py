"""Similarity heads over frozen embedding pairs.

Six variants: the plain cosine baseline; linear re-projections of both,
only the text, or only the visual embedding (cosine on top); two per-side
MLPs (tanh hidden layer, cosine on top); and a single multi-head attention
layer over the sequence [CLS, v, t] whose first CLS output coordinate is
squashed through a sigmoid.

All scoring goes through the autodiff tape so the trainer and the
evaluator share one forward implementation; embeddings are constants,
only head parameters carry gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import UsageError
from .numcore import STORE_DTYPE

COSINE_FAMILY_CLIP = (-1.0, 1.0)


class HeadKind(str, Enum):
    COSINE = "cosine"
    LINEAR_BOTH = "linear-both"
    LINEAR_TEXT = "linear-text"
    LINEAR_VISUAL = "linear-visual"
    MLP = "mlp"
    MHA = "mha"


TRAINABLE_KINDS = tuple(k for k in HeadKind if k is not HeadKind.COSINE)


def head_kind(name: str) -> HeadKind:
    try:
        return HeadKind(name)
    except ValueError:
        valid = ", ".join(k.value for k in HeadKind)
        raise UsageError(f"unknown head kind '{name}' (valid: {valid})") from None


def param_shapes(kind: HeadKind, dim: int, hidden: int, n_heads: int) -> list[tuple[str, tuple]]:
    """Canonical parameter names and shapes, in serialization order."""
    d, h = dim, hidden
    if kind is HeadKind.COSINE:
        return []
    if kind is HeadKind.LINEAR_BOTH:
        return [("w_v", (d, d)), ("b_v", (d,)), ("w_t", (d, d)), ("b_t", (d,))]
    if kind is HeadKind.LINEAR_TEXT:
        return [("w_t", (d, d)), ("b_t", (d,))]
    if kind is HeadKind.LINEAR_VISUAL:
        return [("w_v", (d, d)), ("b_v", (d,))]
    if kind is HeadKind.MLP:
        return [("v_w1", (h, d)), ("v_b1", (h,)), ("v_w2", (d, h)), ("v_b2", (d,)),
                ("t_w1", (h, d)), ("t_b1", (h,)), ("t_w2", (d, h)), ("t_b2", (d,))]
    if kind is HeadKind.MHA:
        return [("w_q", (d, d)), ("b_q", (d,)), ("w_k", (d, d)), ("b_k", (d,)),
                ("w_v", (d, d)), ("b_v", (d,)), ("w_o", (d, d)), ("b_o", (d,)),
                ("cls", (d,))]
    raise UsageError(f"unknown head kind {kind}")


@dataclass
class Head:
    kind: HeadKind
    dim: int
    hidden: int = 0
    n_heads: int = 0
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise UsageError("head dim must be positive")
        if self.kind is HeadKind.MLP and self.hidden <= 0:
            raise UsageError("mlp head needs hidden > 0")
        if self.kind is HeadKind.MHA:
            if self.n_heads <= 0:
                raise UsageError("mha head needs n_heads > 0")
            if self.dim % self.n_heads != 0:
                raise UsageError(f"dim {self.dim} not divisible by {self.n_heads} heads")
        spec = param_shapes(self.kind, self.dim, self.hidden, self.n_heads)
        expected = [name for name, _ in spec]
        if list(self.params.keys()) != expected and set(self.params.keys()) != set(expected):
            raise UsageError(f"head {self.kind.value}: parameter names {sorted(self.params)} "
                             f"do not match {expected}")
        frozen = {}
        for name, shape in spec:
            arr = np.asarray(self.params[name], dtype=STORE_DTYPE)
            if arr.shape != shape:
                raise UsageError(f"parameter '{name}' has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise UsageError(f"parameter '{name}' has non-finite entries")
            arr = np.array(arr, dtype=STORE_DTYPE, order="C")
            arr.setflags(write=False)
            frozen[name] = arr
        self.params = frozen

    @property
    def head_width(self) -> int:
        return self.dim // self.n_heads if self.kind is HeadKind.MHA else self.dim

    @property
    def trainable(self) -> bool:
        return self.kind is not HeadKind.COSINE

    def with_params(self, params: dict[str, np.ndarray]) -> "Head":
        return replace(self, params=params)


def init_head(kind: HeadKind, dim: int, hidden: int = 512, n_heads: int = 64,
              seed: int = 0) -> Head:
    """Seeded init: linear maps start at identity plus small noise so the
    untrained head stays close to the plain cosine; MLP/MHA use scaled
    uniform noise."""
    if isinstance(kind, str):
        kind = head_kind(kind)
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(kind, dim, hidden, n_heads):
        if name == "cls":
            arr = rng.uniform(-1.0, 1.0, size=shape) / math.sqrt(dim)
        elif name.startswith("b") or name.endswith(("b1", "b2")):
            arr = np.zeros(shape)
        elif kind in (HeadKind.LINEAR_BOTH, HeadKind.LINEAR_TEXT, HeadKind.LINEAR_VISUAL):
            arr = np.eye(dim) + 0.01 * rng.standard_normal(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        params[name] = arr.astype(STORE_DTYPE)
    return Head(kind=kind, dim=dim,
                hidden=hidden if kind is HeadKind.MLP else 0,
                n_heads=n_heads if kind is HeadKind.MHA else 0,
                params=params)


def param_nodes(head: Head) -> dict[str, ad.Node]:
    return {name: ad.leaf(arr) for name, arr in head.params.items()}


def _affine(x, w: ad.Node, b: ad.Node) -> ad.Node:
    return ad.add(ad.matmul(x, ad.transpose2d(w)), b)


def _project_visual(head: Head, p: dict[str, ad.Node], v):
    if head.kind in (HeadKind.LINEAR_BOTH, HeadKind.LINEAR_VISUAL):
        return _affine(v, p["w_v"], p["b_v"])
    if head.kind is HeadKind.MLP:
        return _affine(ad.tanh_(_affine(v, p["v_w1"], p["v_b1"])), p["v_w2"], p["v_b2"])
    return ad._wrap(v)


def _project_text(head: Head, p: dict[str, ad.Node], t):
    if head.kind in (HeadKind.LINEAR_BOTH, HeadKind.LINEAR_TEXT):
        return _affine(t, p["w_t"], p["b_t"])
    if head.kind is HeadKind.MLP:
        return _affine(ad.tanh_(_affine(t, p["t_w1"], p["t_b1"])), p["t_w2"], p["t_b2"])
    return ad._wrap(t)


def _unit_rows(x: ad.Node) -> ad.Node:
    return ad.div(x, ad.l2norm_rows(x))


def _mha_pairs(head: Head, p: dict[str, ad.Node], v_rows, t_rows) -> ad.Node:
    n_pairs, d = v_rows.shape
    n_heads, width = head.n_heads, head.dim // head.n_heads
    cls = ad.broadcast_to(ad.reshape(p["cls"], (1, d)), (n_pairs, d))
    x = ad.stack([cls, ad._wrap(v_rows), ad._wrap(t_rows)], axis=1)  # (P, 3, d)

    def project(w, b):
        flat = _affine(ad.reshape(x, (n_pairs * 3, d)), w, b)
        return ad.reshape(flat, (n_pairs, 3, d))

    def split(z):  # (P, 3, d) -> (P, H, 3, width)
        return ad.transpose(ad.reshape(z, (n_pairs, 3, n_heads, width)), (0, 2, 1, 3))

    q = split(project(p["w_q"], p["b_q"]))
    k = split(project(p["w_k"], p["b_k"]))
    val = split(project(p["w_v"], p["b_v"]))
    att = ad.softmax(ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(width)),
                     axis=-1)
    ctx = ad.matmul(att, val)  # (P, H, 3, width)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (n_pairs * 3, d))
    out = ad.reshape(_affine(merged, p["w_o"], p["b_o"]), (n_pairs, 3, d))
    return ad.sigmoid_(ad.take(out, (slice(None), 0, 0)))  # (P,)


def score_pairs_nodes(head: Head, p: dict[str, ad.Node], v_rows: np.ndarray,
                      t_rows: np.ndarray) -> ad.Node:
    """Aligned scores: row i of the result pairs v_rows[i] with t_rows[i]."""
    if v_rows.shape != t_rows.shape or v_rows.ndim != 2:
        raise UsageError(f"aligned scoring needs equal (n, d) shapes, got {v_rows.shape} and {t_rows.shape}")
    if v_rows.shape[1] != head.dim:
        raise UsageError(f"embedding dim {v_rows.shape[1]} does not match head dim {head.dim}")
    if head.kind is HeadKind.MHA:
        return _mha_pairs(head, p, v_rows, t_rows)
    return ad.cosine_rows(_project_visual(head, p, v_rows), _project_text(head, p, t_rows))


def score_matrix_nodes(head: Head, p: dict[str, ad.Node], v_rows: np.ndarray,
                       t_rows: np.ndarray) -> ad.Node:
    """Cross scores: S[i][j] pairs v_rows[i] with t_rows[j]."""
    if v_rows.ndim != 2 or t_rows.ndim != 2:
        raise UsageError("score matrix expects 2-D stacks of embeddings")
    if v_rows.shape[1] != head.dim or t_rows.shape[1] != head.dim:
        raise UsageError(f"embedding dims ({v_rows.shape[1]}, {t_rows.shape[1]}) "
                         f"do not match head dim {head.dim}")
    if head.kind is HeadKind.MHA:
        n_v, n_t = v_rows.shape[0], t_rows.shape[0]
        vv = np.repeat(v_rows, n_t, axis=0)
        tt = np.tile(t_rows, (n_v, 1))
        return ad.reshape(_mha_pairs(head, p, vv, tt), (n_v, n_t))
    vn = _unit_rows(_project_visual(head, p, v_rows))
    tn = _unit_rows(_project_text(head, p, t_rows))
    return ad.matmul(vn, ad.transpose2d(tn))


def score_batch(head: Head, v_rows, t_rows) -> np.ndarray:
    """Forward-only cross score matrix; cosine-family values clipped to [-1, 1]."""
    v_rows = np.asarray(v_rows, dtype=np.float64)
    t_rows = np.asarray(t_rows, dtype=np.float64)
    s = score_matrix_nodes(head, param_nodes(head), v_rows, t_rows).value
    if head.kind is not HeadKind.MHA:
        s = np.clip(s, *COSINE_FAMILY_CLIP)
    return s


def score_pairs(head: Head, v_rows, t_rows) -> np.ndarray:
    """Forward-only aligned scores."""
    v_rows = np.asarray(v_rows, dtype=np.float64)
    t_rows = np.asarray(t_rows, dtype=np.float64)
    s = score_pairs_nodes(head, param_nodes(head), v_rows, t_rows).value
    if head.kind is not HeadKind.MHA:
        s = np.clip(s, *COSINE_FAMILY_CLIP)
    return s


def score(head: Head, v, t) -> float:
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if v.ndim != 1 or t.ndim != 1:
        raise UsageError("score expects two vectors")
    if v.shape != t.shape:
        raise UsageError(f"dimension mismatch: {v.shape[0]} vs {t.shape[0]}")
    return float(score_pairs(head, v[None, :], t[None, :])[0])
