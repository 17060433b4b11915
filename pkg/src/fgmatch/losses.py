"""Hinge-based triplet objectives.

Coarse loss: over a square in-batch score matrix S, every ordered pair
(i, j), i != j contributes both hinge terms

    [margin + S[i][j] - S[i][i]]+  and  [margin + S[j][i] - S[i][i]]+

exactly as written (no hard-negative mining, no pair deduplication).

Fine-grained loss: per item, the image anchors its positive caption
against each of its negatives:

    sum_i sum_j [margin + neg[i][j] - pos[i]]+
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import UsageError


def _check_margin(margin: float) -> float:
    margin = float(margin)
    if margin < 0:
        raise UsageError("margin must be nonnegative")
    return margin


def coarse_triplet_loss_node(scores: ad.Node, margin: float) -> ad.Node:
    margin = _check_margin(margin)
    n = scores.value.shape[0] if scores.value.ndim == 2 else 0
    if scores.value.ndim != 2 or scores.value.shape != (n, n):
        raise UsageError(f"coarse loss needs a square score matrix, got {scores.value.shape}")
    if n < 2:
        raise UsageError("coarse loss needs a batch of at least 2")
    eye = np.eye(n)
    diag = ad.reshape(ad.sum_(ad.mul(scores, eye), axis=1), (n, 1))  # S[i][i] column
    off = 1.0 - eye
    row_hinges = ad.relu(ad.add(ad.sub(scores, diag), margin))
    col_hinges = ad.relu(ad.add(ad.sub(ad.transpose2d(scores), diag), margin))
    return ad.add(ad.sum_(ad.mul(row_hinges, off)), ad.sum_(ad.mul(col_hinges, off)))


def coarse_triplet_loss(scores, margin: float) -> float:
    node = coarse_triplet_loss_node(ad._wrap(np.asarray(scores, dtype=np.float64)), margin)
    return float(node.value)


def finegrained_triplet_loss_node(pos: ad.Node, negs: ad.Node, margin: float) -> ad.Node:
    margin = _check_margin(margin)
    if pos.value.ndim != 1 or negs.value.ndim != 2 or negs.value.shape[0] != pos.value.shape[0]:
        raise UsageError(f"fine-grained loss needs pos (B,) and negs (B, N), "
                         f"got {pos.value.shape} and {negs.value.shape}")
    if negs.value.shape[1] < 1:
        raise UsageError("each item needs at least one negative")
    hinges = ad.relu(ad.add(ad.sub(negs, ad.reshape(pos, (-1, 1))), margin))
    return ad.sum_(hinges)


def finegrained_triplet_loss(pos_scores, neg_scores, margin: float) -> float:
    """Array form; accepts ragged per-item negative lists."""
    margin = _check_margin(margin)
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    if len(pos) != len(neg_scores):
        raise UsageError("one negative list per positive score required")
    total = 0.0
    for p, negs in zip(pos, neg_scores):
        row = np.asarray(negs, dtype=np.float64).ravel()
        if row.size == 0:
            raise UsageError("each item needs at least one negative")
        total += float(np.maximum(margin + row - p, 0.0).sum())
    return total
