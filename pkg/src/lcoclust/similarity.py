"""Pairwise similarity sources and their quality metrics.

Three kinds of oracle answer "which pairs in this batch are similar":

* :class:`LabelOracle` converts class labels into pair labels,
* :class:`NoisyLabelOracle` does the same and then flips pairs to hit a
  target similar / dissimilar recall,
* :class:`NetOracle` asks a trained :class:`SimilarityNet`.

All of them expose ``query(indices, x, rng)`` and never change after
construction; any randomness comes from the caller's ``rng``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import net as nn
from .data import Dataset, sample_balanced_batch
from .numerics import log_softmax, softmax

log = logging.getLogger(__name__)


@dataclass
class SimilarityMatrix:
    binary: np.ndarray  # bool, n x n
    raw: np.ndarray | None = None  # similar-class probability, present for learned predictors

    def __post_init__(self):
        b = np.asarray(self.binary).astype(bool)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("similarity matrix must be square")
        self.binary = b

    @property
    def n(self) -> int:
        return self.binary.shape[0]


@dataclass(frozen=True)
class NoisyOracleConfig:
    similar_recall: float = 1.0
    dissimilar_recall: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("similar_recall", "dissimilar_recall"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class PairwiseQuality:
    similar_precision: float
    similar_recall: float
    dissimilar_precision: float
    dissimilar_recall: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.similar_precision, self.similar_recall,
                self.dissimilar_precision, self.dissimilar_recall)


# ---------------------------------------------------------------------------
# label-derived similarity, noise, density
# ---------------------------------------------------------------------------


def pair_label_from_classes(labels) -> SimilarityMatrix:
    y = np.asarray(labels)
    return SimilarityMatrix(y[:, None] == y[None, :])


def apply_recall_noise(truth: SimilarityMatrix, cfg: NoisyOracleConfig, rng=None) -> SimilarityMatrix:
    """Flip off-diagonal pair labels to reach the configured recalls.

    A true-similar pair survives with probability ``similar_recall`` and a
    true-dissimilar pair with probability ``dissimilar_recall``. Each
    unordered pair is decided once and mirrored; the diagonal is untouched.
    Without ``rng`` the draw is seeded from ``cfg.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    t = truth.binary
    n = t.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    draws = rng.random(iu.size)
    upper = t[iu, ju]
    flip_p = np.where(upper, 1.0 - cfg.similar_recall, 1.0 - cfg.dissimilar_recall)
    flipped = np.where(draws < flip_p, ~upper, upper)
    out = t.copy()
    out[iu, ju] = flipped
    out[ju, iu] = flipped
    return SimilarityMatrix(out)


def subsample_density(mask, density: float, rng) -> np.ndarray:
    """Keep each unordered off-diagonal pair (both orders together) with probability ``density``.

    ``mask`` is an n x n pair mask or a batch size. Self-pairs are kept as given.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    if np.isscalar(mask):
        mask = np.ones((int(mask), int(mask)))
    mask = np.asarray(mask, dtype=np.float64)
    if density == 1.0:
        return mask.copy()
    n = mask.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = (rng.random(iu.size) < density).astype(np.float64)
    sel = np.zeros((n, n))
    sel[iu, ju] = keep
    sel[ju, iu] = keep
    np.fill_diagonal(sel, 1.0)
    return mask * sel


def pairwise_quality(pred: SimilarityMatrix, truth: SimilarityMatrix) -> PairwiseQuality:
    """Precision and recall of both pair types over ordered off-diagonal pairs.

    A ratio with an empty denominator is NaN.
    """
    if pred.n != truth.n:
        raise ValueError("similarity matrices differ in size")
    off = ~np.eye(pred.n, dtype=bool)
    p, t = pred.binary[off], truth.binary[off]

    def ratio(num, den):
        return float(num / den) if den else float("nan")

    tp = np.sum(p & t)
    tn = np.sum(~p & ~t)
    return PairwiseQuality(
        similar_precision=ratio(tp, np.sum(p)),
        similar_recall=ratio(tp, np.sum(t)),
        dissimilar_precision=ratio(tn, np.sum(~p)),
        dissimilar_recall=ratio(tn, np.sum(~t)),
    )


# ---------------------------------------------------------------------------
# learned similarity: feature net + pair-enumeration + pair head
# ---------------------------------------------------------------------------


@dataclass
class SimilarityNet:
    feature_net: nn.Mlp
    pair_head: nn.Mlp

    def __post_init__(self):
        if self.pair_head.in_dim != 2 * self.feature_net.out_dim:
            raise ValueError("pair head input must be twice the feature width")
        if self.pair_head.out_dim != 2:
            raise ValueError("pair head must emit 2 logits")

    def to_networks(self) -> dict[str, nn.Mlp]:
        return {"feature": self.feature_net, "pair_head": self.pair_head}

    @classmethod
    def from_networks(cls, nets: dict[str, nn.Mlp]) -> "SimilarityNet":
        try:
            return cls(nets["feature"], nets["pair_head"])
        except KeyError as exc:
            raise ValueError(f"model file lacks network {exc.args[0]!r}") from None

    def save(self, path) -> None:
        nn.save_networks(path, self.to_networks())

    @classmethod
    def load(cls, path) -> "SimilarityNet":
        return cls.from_networks(nn.load_networks(path))


def make_similarity_net(in_dim: int, feature_hidden=(64,), embed_dim: int = 32,
                        pair_hidden: int = 64, seed: int = 0) -> SimilarityNet:
    feature = nn.init(nn.mlp_specs(in_dim, list(feature_hidden), embed_dim), seed)
    # relu on the embedding keeps the pair head input non-negative, like pooled conv features
    feature.activations[-1] = "relu"
    head = nn.init(nn.mlp_specs(2 * embed_dim, [pair_hidden], 2), seed + 1)
    return SimilarityNet(feature, head)


def enumerate_pairs(emb: np.ndarray) -> np.ndarray:
    """All n**2 ordered concatenations; row ``i * n + j`` is ``[emb[i], emb[j]]``."""
    n, e = emb.shape
    left = np.repeat(emb, n, axis=0)
    right = np.tile(emb, (n, 1))
    return np.hstack([left, right]).reshape(n * n, 2 * e)


def _pair_forward(net: SimilarityNet, x):
    f_cache, emb = nn.forward(net.feature_net, x)
    h_cache, logits = nn.forward(net.pair_head, enumerate_pairs(emb))
    return f_cache, emb, h_cache, logits


def similarity_loss_and_grads(net: SimilarityNet, x, labels):
    """Mean two-class cross-entropy over all n**2 enumerated pairs and its gradients."""
    f_cache, emb, h_cache, logits = _pair_forward(net, x)
    n, e = emb.shape
    target = pair_label_from_classes(labels).binary.reshape(-1).astype(np.int64)
    logp = log_softmax(logits)
    m = target.size
    loss = -float(np.mean(logp[np.arange(m), target]))
    g = np.exp(logp)
    g[np.arange(m), target] -= 1.0
    g /= m
    head_grads = nn.backward(net.pair_head, h_cache, g)
    d_pairs = head_grads.input.reshape(n, n, 2 * e)
    d_emb = d_pairs[:, :, :e].sum(axis=1) + d_pairs[:, :, e:].sum(axis=0)
    feat_grads = nn.backward(net.feature_net, f_cache, d_emb)
    return loss, feat_grads, head_grads


def similarity_loss(net: SimilarityNet, x, labels) -> float:
    return similarity_loss_and_grads(net, x, labels)[0]


def train_similarity_net(aux: Dataset, net: SimilarityNet, cfg: nn.SgdConfig,
                         classes_per_batch: int, seed: int = 0,
                         batches_per_epoch: int | None = None) -> SimilarityNet:
    """Train ``net`` in place on class-balanced batches of ``aux``; returns it."""
    if aux.labels is None:
        raise ValueError("similarity training needs labeled auxiliary data")
    n_classes = np.unique(aux.labels).size
    if classes_per_batch > n_classes:
        raise ValueError(f"requested {classes_per_batch} classes per batch, data has {n_classes}")
    rng = np.random.default_rng(seed)
    steps = batches_per_epoch or max(1, len(aux) // cfg.batch_size)
    v_feat = nn.Velocity.zeros_like(net.feature_net)
    v_head = nn.Velocity.zeros_like(net.pair_head)
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(steps):
            idx = sample_balanced_batch(aux, classes_per_batch, cfg.batch_size, rng)
            loss, g_feat, g_head = similarity_loss_and_grads(net, aux.features[idx], aux.labels[idx])
            nn.sgd_step(net.feature_net, g_feat, v_feat, cfg)
            nn.sgd_step(net.pair_head, g_head, v_head, cfg)
            total += loss
        log.debug("similarity epoch %d loss %.5f", epoch, total / steps)
    return net


def pair_probabilities(net: SimilarityNet, x) -> np.ndarray:
    n = np.asarray(x).shape[0]
    logits = _pair_forward(net, x)[3]
    return softmax(logits)[:, 1].reshape(n, n)


def predict_pairs(net: SimilarityNet, batch) -> SimilarityMatrix:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("predict_pairs needs a non-empty n x d batch")
    raw = pair_probabilities(net, batch)
    return SimilarityMatrix(raw >= 0.5, raw)


def n_way_test(net: SimilarityNet, exemplars, query) -> int:
    """Index of the exemplar the net finds most similar to ``query`` (raw probabilities)."""
    ex = np.asarray(exemplars, dtype=np.float64)
    if ex.ndim != 2 or ex.shape[0] < 2:
        raise ValueError("n-way test needs at least two exemplars")
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    emb_e = nn.forward(net.feature_net, ex)[1]
    emb_q = nn.forward(net.feature_net, q)[1]
    pairs = np.hstack([np.repeat(emb_q, ex.shape[0], axis=0), emb_e])
    raw = softmax(nn.predict_logits(net.pair_head, pairs))[:, 1]
    return int(np.argmax(raw))


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


class LabelOracle:
    """Ground-truth pair labels from known classes."""

    def __init__(self, labels):
        self.labels = np.asarray(labels)

    def query(self, indices, x=None, rng=None) -> SimilarityMatrix:
        return pair_label_from_classes(self.labels[indices])


class NoisyLabelOracle:
    """Ground truth with per-batch recall noise."""

    def __init__(self, labels, cfg: NoisyOracleConfig):
        self.labels = np.asarray(labels)
        self.cfg = cfg

    def query(self, indices, x=None, rng=None) -> SimilarityMatrix:
        truth = pair_label_from_classes(self.labels[indices])
        return apply_recall_noise(truth, self.cfg, rng)

    def stream_seed(self, run_seed: int) -> list[int]:
        return [self.cfg.seed, run_seed]


class NetOracle:
    """Binarized predictions of a fixed similarity net."""

    def __init__(self, net: SimilarityNet):
        self.net = net

    def query(self, indices, x=None, rng=None) -> SimilarityMatrix:
        if x is None:
            raise ValueError("a learned oracle needs the batch features")
        return predict_pairs(self.net, x)
