"""Constrained clustering network training, assignment, cluster-count estimates, K-means."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import net as nn
from .data import Dataset
from .numerics import softmax
from .objective import LcoConfig, dense_batch_loss
from .similarity import subsample_density

log = logging.getLogger(__name__)


@dataclass
class CcnConfig:
    k_out: int = 10
    hidden_dims: tuple[int, ...] = (64,)
    sgd: nn.SgdConfig = field(default_factory=nn.SgdConfig)
    restarts: int = 5
    density: float = 1.0
    seed: int = 0
    lco: LcoConfig = field(default_factory=LcoConfig)
    # mini-batches per epoch; None means ceil(N / batch_size)
    batches_per_epoch: int | None = None

    def __post_init__(self):
        if self.k_out < 2:
            raise ValueError("k_out must be >= 2")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must be in (0, 1]")


@dataclass(frozen=True)
class ClusterSizes:
    sizes: np.ndarray

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    @property
    def k(self) -> int:
        return int(self.sizes.size)


def _oracle_rng(oracle, run_seed: int):
    stream = getattr(oracle, "stream_seed", None)
    return np.random.default_rng(stream(run_seed) if stream else [run_seed, 1])


class _BatchStream:
    """Uniform batches drawn from consecutive shuffles of the index range."""

    def __init__(self, n: int, batch_size: int, rng):
        self.n, self.bs, self.rng = n, min(batch_size, n), rng
        self.buf = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        while self.buf.size < self.bs:
            self.buf = np.concatenate([self.buf, self.rng.permutation(self.n)])
        out, self.buf = self.buf[:self.bs], self.buf[self.bs:]
        return out


def ccn_step_loss(model: nn.Mlp, x, sims, lco: LcoConfig, mask=None):
    """Batch pair-loss sum divided by n**2, and its parameter gradients.

    The divisor is the full pair count whatever ``mask`` drops, so a sparse
    batch is the plain sum rescaled by a constant and contributes a
    proportionally smaller step.
    """
    cache, logits = nn.forward(model, x)
    res = dense_batch_loss(logits, sims, lco, mask)
    scale = 1.0 / max(len(logits) ** 2, 1)
    grads = nn.backward(model, cache, res.grad_wrt_logits * scale)
    return res.loss * scale, grads


def new_ccn_model(in_dim: int, cfg: CcnConfig, seed: int) -> nn.Mlp:
    return nn.init(nn.mlp_specs(in_dim, list(cfg.hidden_dims), cfg.k_out), seed)


def train_ccn(data: Dataset, oracle, cfg: CcnConfig, run_seed: int | None = None,
              history: list | None = None) -> nn.Mlp:
    """Fit a clustering network to the oracle's pair labels with the LCO.

    Labels in ``data`` are never read; only the oracle sees the batch.
    Per-epoch mean pair losses are appended to ``history`` when given.
    """
    seed = cfg.seed if run_seed is None else run_seed
    model = new_ccn_model(data.dim, cfg, seed)
    rng = np.random.default_rng([seed, 0])
    oracle_rng = _oracle_rng(oracle, seed)
    stream = _BatchStream(len(data), cfg.sgd.batch_size, rng)
    steps = cfg.batches_per_epoch or -(-len(data) // cfg.sgd.batch_size)
    velocity = nn.Velocity.zeros_like(model)
    for epoch in range(cfg.sgd.epochs):
        total = 0.0
        for _ in range(steps):
            idx = stream.next()
            x = data.features[idx]
            sims = oracle.query(idx, x, oracle_rng).binary
            mask = None
            if cfg.density < 1.0:
                mask = subsample_density(idx.size, cfg.density, rng)
            loss, grads = ccn_step_loss(model, x, sims, cfg.lco, mask)
            nn.sgd_step(model, grads, velocity, cfg.sgd)
            total += loss
        if history is not None:
            history.append(total / steps)
        log.debug("ccn seed %d epoch %d loss %.5f", seed, epoch, total / steps)
    return model


def final_loss(model: nn.Mlp, data: Dataset, oracle, cfg: CcnConfig) -> float:
    """Mean pair loss over a fixed partition of the whole dataset into batches.

    The partition and any oracle noise depend on ``cfg.seed`` only, so every
    restart is scored on the same pairs.
    """
    rng = np.random.default_rng([cfg.seed, 99])
    oracle_rng = _oracle_rng(oracle, cfg.seed + 10_007)
    order = rng.permutation(len(data))
    bs = cfg.sgd.batch_size
    total, pairs = 0.0, 0
    for start in range(0, len(data), bs):
        idx = order[start:start + bs]
        x = data.features[idx]
        sims = oracle.query(idx, x, oracle_rng).binary
        res = dense_batch_loss(nn.predict_logits(model, x), sims, cfg.lco)
        total += res.loss
        pairs += res.pair_count
    return total / pairs


def best_of_restarts(data: Dataset, oracle, cfg: CcnConfig):
    """Train ``cfg.restarts`` models (seeds ``seed .. seed + restarts - 1``).

    Returns the model with the lowest :func:`final_loss` and the list of
    per-restart final losses.
    """
    best, losses = None, []
    for r in range(cfg.restarts):
        model = train_ccn(data, oracle, cfg, run_seed=cfg.seed + r)
        loss = final_loss(model, data, oracle, cfg)
        losses.append(loss)
        if best is None or loss < losses[best[0]]:
            best = (r, model)
    return best[1], losses


def assign_clusters(model: nn.Mlp, data) -> np.ndarray:
    x = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    return np.argmax(softmax(nn.predict_logits(model, x)), axis=1)


def cluster_sizes(labels, k: int) -> ClusterSizes:
    return ClusterSizes(np.bincount(np.asarray(labels), minlength=k))


def estimate_ndc(sizes: ClusterSizes) -> int:
    """Number of clusters at least as large as the uniform expectation N / K."""
    if sizes.k < 1:
        raise ValueError("need at least one cluster")
    expected = sizes.total / sizes.k
    return int(np.sum(sizes.sizes >= expected))


def adif(per_dataset) -> float:
    """Mean absolute gap between estimated and true class counts."""
    per_dataset = list(per_dataset)
    if not per_dataset:
        raise ValueError("adif needs at least one dataset")
    return float(np.mean([abs(ndc - true) for ndc, true in per_dataset]))


# ---------------------------------------------------------------------------
# K-means baseline
# ---------------------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    sse_history: list[float]


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[j] = x[i]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def kmeans_fit(x, k: int, iters: int = 100, seed: int = 0) -> KMeansResult:
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    labels, d2 = kernels.nearest_center(x, centers)
    history = [float(d2.sum())]
    for _ in range(iters):
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                centers[j] = x[far]
                d2[far] = 0.0
        new_labels, d2 = kernels.nearest_center(x, centers)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(labels, centers, history)


def kmeans(x, k: int, iters: int = 100, seed: int = 0) -> np.ndarray:
    return kmeans_fit(x, k, iters, seed).labels
