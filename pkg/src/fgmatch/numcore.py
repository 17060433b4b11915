"""Dense numeric kernels shared by the similarity heads.

Storage convention: embeddings and head parameters live in float32
(what exported embedding files hold); every accumulation that matters
(dot products, norms, reductions) runs in float64.  Zero-norm vectors
are rejected rather than silently mapped to zero similarity.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, UsageError

STORE_DTYPE = np.float32
COMPUTE_DTYPE = np.float64


def as_vector(data, name: str = "vector") -> np.ndarray:
    """Validate and freeze a 1-D float32 vector."""
    arr = np.array(data, dtype=STORE_DTYPE, copy=True)
    if arr.ndim != 1 or arr.size == 0:
        raise UsageError(f"{name} must be a non-empty 1-D sequence, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate and freeze a 2-D float32 matrix (row-major)."""
    arr = np.array(data, dtype=STORE_DTYPE, copy=True, order="C")
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise UsageError(f"{name} must be 2-D with positive dims, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def cosine(a, b) -> float:
    """Cosine similarity with float64 accumulation, clipped to [-1, 1]."""
    av = np.asarray(a, dtype=COMPUTE_DTYPE)
    bv = np.asarray(b, dtype=COMPUTE_DTYPE)
    if av.ndim != 1 or bv.ndim != 1:
        raise UsageError("cosine expects two vectors")
    if av.shape != bv.shape:
        raise UsageError(f"dimension mismatch: {av.shape[0]} vs {bv.shape[0]}")
    na = float(np.sqrt(np.dot(av, av)))
    nb = float(np.sqrt(np.dot(bv, bv)))
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine undefined for zero-norm vector")
    return float(min(1.0, max(-1.0, float(np.dot(av, bv)) / (na * nb))))


def matvec(w, x) -> np.ndarray:
    wv = np.asarray(w, dtype=COMPUTE_DTYPE)
    xv = np.asarray(x, dtype=COMPUTE_DTYPE)
    if wv.ndim != 2 or xv.ndim != 1:
        raise UsageError("matvec expects a matrix and a vector")
    if wv.shape[1] != xv.shape[0]:
        raise UsageError(f"dimension mismatch: matrix cols {wv.shape[1]} vs vector dim {xv.shape[0]}")
    out = (wv @ xv).astype(STORE_DTYPE)
    out.setflags(write=False)
    return out


def softmax(x) -> np.ndarray:
    """Max-subtracted softmax; entries positive, sums to 1."""
    xv = np.asarray(x, dtype=COMPUTE_DTYPE)
    if xv.ndim != 1 or xv.size == 0:
        raise UsageError("softmax expects a non-empty vector")
    if not np.all(np.isfinite(xv)):
        raise DomainError("softmax input must be finite")
    e = np.exp(xv - xv.max())
    out = (e / e.sum()).astype(STORE_DTYPE)
    out.setflags(write=False)
    return out


def tanh_vec(x) -> np.ndarray:
    xv = np.asarray(x, dtype=COMPUTE_DTYPE)
    if xv.ndim != 1:
        raise UsageError("tanh_vec expects a vector")
    out = np.tanh(xv).astype(STORE_DTYPE)
    out.setflags(write=False)
    return out


def sigmoid(x: float) -> float:
    xv = float(x)
    if xv >= 0:
        return 1.0 / (1.0 + float(np.exp(-xv)))
    e = float(np.exp(xv))
    return e / (1.0 + e)


def l2_normalize_rows(x: np.ndarray, names=None) -> np.ndarray:
    """Unit-normalize each row in float64; zero-norm rows are an error."""
    xv = np.asarray(x, dtype=COMPUTE_DTYPE)
    norms = np.sqrt(np.sum(xv * xv, axis=-1, keepdims=True))
    bad = np.nonzero(norms.ravel() == 0.0)[0]
    if bad.size:
        label = names[bad[0]] if names is not None else f"row {bad[0]}"
        raise DomainError(f"cannot normalize zero-norm embedding ({label})")
    return xv / norms
