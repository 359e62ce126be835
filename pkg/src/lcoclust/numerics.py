"""Stable probability primitives shared by every other module.

Distributions are plain 1-D (or row-stacked 2-D) float64 numpy arrays.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-7


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction.

    Accepts a vector or a matrix (softmax over the last axis).

    >>> softmax([0.0, 0.0])
    array([0.5, 0.5])
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax expects finite logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def clamp_prob(p) -> np.ndarray:
    """Floor every entry at ``PROB_FLOOR``. No renormalization."""
    return np.maximum(np.asarray(p, dtype=np.float64), PROB_FLOOR)


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats, both sides clamped at ``PROB_FLOOR`` first.

    Rounding can push the sum a few ulps below zero for near-equal inputs;
    the result is floored at 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    pc = clamp_prob(p)
    qc = clamp_prob(q)
    return max(0.0, float(np.sum(pc * (np.log(pc) - np.log(qc)))))
