"""The learnable clustering objective: pairwise KL costs and the dense batch loss.

Each KL factor treats its first distribution as a constant (stop-gradient),
so ``KL(P* || Q)`` sends gradient only into ``Q``. :func:`dense_batch_loss`
returns that gradient with respect to the logits; the loss value itself is
evaluated on the actual distributions on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import PROB_FLOOR, clamp_prob, kl_divergence, softmax


@dataclass(frozen=True)
class LcoConfig:
    sigma: float = 2.0
    include_self_pairs: bool = True
    include_both_orders: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass
class BatchLossResult:
    loss: float
    grad_wrt_logits: np.ndarray
    pair_count: int


def hinge(e: float, sigma: float) -> float:
    return max(0.0, sigma - e)


def similar_pair_cost(p, q) -> float:
    return kl_divergence(p, q) + kl_divergence(q, p)


def dissimilar_pair_cost(p, q, sigma: float = 2.0) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return hinge(kl_divergence(p, q), sigma) + hinge(kl_divergence(q, p), sigma)


def contrastive_pair_cost(p, q, g: int, cfg: LcoConfig = LcoConfig()) -> float:
    """Similar cost when ``g`` is 1, hinged dissimilar cost when ``g`` is 0."""
    if g not in (0, 1, True, False):
        raise ValueError(f"pair label must be 0 or 1, got {g!r}")
    if g:
        return similar_pair_cost(p, q)
    return dissimilar_pair_cost(p, q, cfg.sigma)


def pair_mask(n: int, cfg: LcoConfig = LcoConfig()) -> np.ndarray:
    """Float mask over the n x n ordered pairs selected by ``cfg``.

    The default selects all n**2 ordered pairs, self-pairs included.
    """
    mask = np.ones((n, n))
    if not cfg.include_both_orders:
        mask = np.triu(mask)
    if not cfg.include_self_pairs:
        np.fill_diagonal(mask, 0.0)
    return mask


def pair_index_set(mask: np.ndarray) -> list[tuple[int, int]]:
    p, q = np.nonzero(mask)
    return list(zip(p.tolist(), q.tolist()))


def _check_inputs(logits, sims, mask):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError("logits must be an n x k matrix")
    n = logits.shape[0]
    sims = np.asarray(sims)
    if sims.shape != (n, n):
        raise ValueError(f"similarity matrix shape {sims.shape} does not match batch of {n}")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (n, n):
            raise ValueError(f"pair mask shape {mask.shape} does not match batch of {n}")
    return logits, sims.astype(bool), mask


def _softmax_backward(probs, grad_probs):
    inner = np.einsum("ij,ij->i", grad_probs, probs)
    return probs * (grad_probs - inner[:, None])


def dense_batch_loss(
    logits,
    sims,
    cfg: LcoConfig = LcoConfig(),
    mask=None,
    anchor_logits=None,
) -> BatchLossResult:
    """Sum of contrastive pair costs over the batch pair set, and its logit gradient.

    Parameters
    ----------
    logits : (n, k) array
        Cluster-assignment logits, one row per sample.
    sims : (n, n) array of {0, 1}
        Pair labels; ``sims[p, q]`` gates the ordered pair ``(p, q)``.
    cfg : LcoConfig
    mask : (n, n) array, optional
        Pair selection (e.g. from density subsampling). Defaults to
        :func:`pair_mask` for ``cfg``. It is intersected with the config mask.
    anchor_logits : (n, k) array, optional
        Logits that supply the constant (starred) side of every KL factor.
        Defaults to ``logits``. Only useful for checking the stop-gradient
        contract: the returned gradient is exactly the derivative of this
        loss with the anchors held fixed, evaluated at ``anchor = logits``.
    """
    logits, sims, mask = _check_inputs(logits, sims, mask)
    n = logits.shape[0]
    base = pair_mask(n, cfg)
    mask = base if mask is None else base * mask

    probs = softmax(logits)
    live = clamp_prob(probs)
    log_live = np.log(live)
    if anchor_logits is None:
        star, log_star = live, log_live
    else:
        anchor_logits = np.asarray(anchor_logits, dtype=np.float64)
        if anchor_logits.shape != logits.shape:
            raise ValueError("anchor_logits must match logits")
        star = clamp_prob(softmax(anchor_logits))
        log_star = np.log(star)

    loss, grad_live = kernels.lco_pair_terms(
        np.ascontiguousarray(star),
        np.ascontiguousarray(log_star),
        np.ascontiguousarray(live),
        np.ascontiguousarray(log_live),
        np.ascontiguousarray(sims),
        np.ascontiguousarray(mask),
        float(cfg.sigma),
    )
    # clamp passes gradient only where the floor is inactive
    grad_probs = np.where(probs > PROB_FLOOR, grad_live, 0.0)
    grad_logits = _softmax_backward(probs, grad_probs)
    return BatchLossResult(float(loss), grad_logits, int(np.count_nonzero(mask)))
