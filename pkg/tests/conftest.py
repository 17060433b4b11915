"""Shared test oracles: finite differences and head parameter generators."""

import numpy as np
import pytest

from fgmatch.heads import HeadKind, init_head, param_shapes


def finite_difference(f, params, step=1e-3):
    """Central finite differences of a scalar function of float64 arrays.

    `f` is called as f(params) and must not retain references; entries are
    perturbed in place and restored.
    """
    grads = []
    for p in params:
        if p.dtype != np.float64:
            raise AssertionError("finite differences need float64 parameters")
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(params)
            flat[i] = orig - step
            lo = f(params)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-2):
    """Max elementwise |a-n| / max(|a|, |n|, floor) over a list of arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_param_values(kind, dim, hidden, n_heads, rng, scale=0.5):
    """Float64 parameter dict with the head's canonical shapes."""
    out = {}
    for name, shape in param_shapes(kind, dim, hidden, n_heads):
        out[name] = scale * rng.standard_normal(shape)
    return out


def template_head(kind, dim, hidden=0, n_heads=0, seed=0):
    """A validly-initialized head used only for its kind/shape metadata."""
    kwargs = {}
    if kind is HeadKind.MLP:
        kwargs["hidden"] = hidden or 16
    if kind is HeadKind.MHA:
        kwargs["n_heads"] = n_heads or 4
    return init_head(kind, dim, seed=seed, **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
