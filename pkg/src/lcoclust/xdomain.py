"""Cross-domain training: source classification plus LCO on unlabeled target batches."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import net as nn
from .clustering import _BatchStream, _oracle_rng
from .data import Dataset
from .numerics import log_softmax, softmax
from .objective import LcoConfig, dense_batch_loss

log = logging.getLogger(__name__)


@dataclass
class MixedBatch:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    # row indices of the target samples, passed to label-based oracles
    target_idx: np.ndarray | None = None

    def __post_init__(self):
        self.source_x = np.asarray(self.source_x, dtype=np.float64)
        self.target_x = np.asarray(self.target_x, dtype=np.float64)
        if self.source_x.ndim != 2 or self.target_x.ndim != 2:
            raise ValueError("source_x and target_x must be 2-D")
        self.source_y = np.asarray(self.source_y, dtype=np.int64).reshape(-1)
        if self.source_x.shape[0] != self.source_y.size:
            raise ValueError("source_x and source_y disagree on the number of samples")


@dataclass
class CdConfig:
    k_out: int = 10
    hidden_dims: tuple[int, ...] = (64,)
    # sgd.batch_size is unused here; the two batch sizes below apply
    sgd: nn.SgdConfig = field(default_factory=lambda: nn.SgdConfig(epochs=15))
    source_batch: int = 32
    target_batch: int = 96
    lco: LcoConfig = field(default_factory=LcoConfig)
    seed: int = 0
    # steps per epoch; None means ceil(len(target) / target_batch)
    batches_per_epoch: int | None = None

    def __post_init__(self):
        if self.k_out < 2:
            raise ValueError("k_out must be >= 2")
        if self.source_batch < 0 or self.target_batch < 0 or self.source_batch + self.target_batch == 0:
            raise ValueError("batch sizes must be non-negative and not both zero")


def _check_dims(model: nn.Mlp, k_out: int, *xs):
    if model.out_dim != k_out:
        raise ValueError(f"model has {model.out_dim} outputs, config expects {k_out}")
    for x in xs:
        if x.size and x.shape[1] != model.in_dim:
            raise ValueError(f"input has {x.shape[1]} features, model expects {model.in_dim}")


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    n = labels.size
    if n == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def cross_domain_terms(model: nn.Mlp, batch: MixedBatch, target_sims, cfg: CdConfig):
    """Return (l_cls, l_cluster, grads) with gradients of their sum."""
    _check_dims(model, cfg.k_out, batch.source_x, batch.target_x)
    if batch.source_y.size and (batch.source_y.min() < 0 or batch.source_y.max() >= cfg.k_out):
        raise ValueError(f"source labels must lie in [0, {cfg.k_out})")
    ns, nt = batch.source_y.size, batch.target_x.shape[0]
    x = np.vstack([batch.source_x, batch.target_x])
    cache, logits = nn.forward(model, x)
    l_cls, g_src = cross_entropy(logits[:ns], batch.source_y)
    l_cluster, g_tgt = 0.0, np.zeros((nt, cfg.k_out))
    if nt:
        res = dense_batch_loss(logits[ns:], target_sims, cfg.lco)
        l_cluster = res.loss / nt**2
        g_tgt = res.grad_wrt_logits / nt**2
    grads = nn.backward(model, cache, np.vstack([g_src, g_tgt]))
    return l_cls, l_cluster, grads


def cross_domain_loss(model: nn.Mlp, batch: MixedBatch, oracle, cfg: CdConfig, rng=None):
    """Classification loss on the source part plus LCO on the target part.

    Both terms read the same output head.  Returns ``(loss, grads)``.
    """
    sims = None
    if batch.target_x.shape[0]:
        idx = batch.target_idx if batch.target_idx is not None else np.arange(batch.target_x.shape[0])
        sims = oracle.query(idx, batch.target_x, rng).binary
    l_cls, l_cluster, grads = cross_domain_terms(model, batch, sims, cfg)
    return l_cls + l_cluster, grads


def balanced_indices(labels: np.ndarray, size: int, rng) -> np.ndarray:
    """Draw ``size`` rows spread as evenly as possible over the classes.

    Each class contributes ``size // C`` rows; the remainder goes to randomly
    chosen classes.  Classes smaller than their share are sampled with
    replacement.
    """
    classes = np.unique(labels)
    counts = np.full(classes.size, size // classes.size)
    counts[rng.permutation(classes.size)[: size % classes.size]] += 1
    out = []
    for c, k in zip(classes, counts):
        members = np.flatnonzero(labels == c)
        out.append(rng.choice(members, size=k, replace=k > members.size))
    return rng.permutation(np.concatenate(out))


def new_cd_model(in_dim: int, cfg: CdConfig, seed: int) -> nn.Mlp:
    return nn.init(nn.mlp_specs(in_dim, list(cfg.hidden_dims), cfg.k_out), seed)


def _validate_source(source: Dataset, cfg: CdConfig):
    if source.labels is None:
        raise ValueError("source data must be labeled")
    if source.class_count != cfg.k_out:
        raise ValueError(f"source has {source.class_count} classes, k_out is {cfg.k_out}")


def train_ccn_plus(source: Dataset, target: Dataset, oracle, cfg: CdConfig,
                   history: list | None = None, init: nn.Mlp | None = None) -> nn.Mlp:
    """Train on mixed batches: class-balanced source draws, uniform target draws.

    ``init`` (for example a source-only model) is copied and used as the
    starting point instead of a fresh initialization.
    """
    _validate_source(source, cfg)
    if target.dim != source.dim:
        raise ValueError("source and target feature dims differ")
    model = init.copy() if init is not None else new_cd_model(source.dim, cfg, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 0])
    oracle_rng = _oracle_rng(oracle, cfg.seed)
    stream = _BatchStream(len(target), cfg.target_batch, rng) if cfg.target_batch else None
    steps = cfg.batches_per_epoch or -(-len(target) // max(cfg.target_batch, 1))
    velocity = nn.Velocity.zeros_like(model)
    empty = np.empty((0, source.dim))
    for epoch in range(cfg.sgd.epochs):
        total = 0.0
        for _ in range(steps):
            s_idx = balanced_indices(source.labels, cfg.source_batch, rng) if cfg.source_batch else np.empty(0, int)
            t_idx = stream.next() if stream else np.empty(0, int)
            batch = MixedBatch(source.features[s_idx] if s_idx.size else empty, source.labels[s_idx],
                               target.features[t_idx] if t_idx.size else empty, t_idx)
            loss, grads = cross_domain_loss(model, batch, oracle, cfg, oracle_rng)
            nn.sgd_step(model, grads, velocity, cfg.sgd)
            total += loss
        if history is not None:
            history.append(total / steps)
        log.debug("ccn+ epoch %d loss %.5f", epoch, total / steps)
    return model


def train_source_only(source: Dataset, cfg: CdConfig, history: list | None = None) -> nn.Mlp:
    """Cross-entropy on class-balanced source batches; the no-adaptation baseline.

    Shares the model seed with :func:`train_ccn_plus`, so both runs start
    from identical weights.
    """
    _validate_source(source, cfg)
    model = new_cd_model(source.dim, cfg, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 0])
    steps = cfg.batches_per_epoch or -(-len(source) // max(cfg.source_batch, 1))
    velocity = nn.Velocity.zeros_like(model)
    bs = cfg.source_batch or cfg.target_batch
    for epoch in range(cfg.sgd.epochs):
        total = 0.0
        for _ in range(steps):
            idx = balanced_indices(source.labels, bs, rng)
            cache, logits = nn.forward(model, source.features[idx])
            loss, g = cross_entropy(logits, source.labels[idx])
            nn.sgd_step(model, nn.backward(model, cache, g), velocity, cfg.sgd)
            total += loss
        if history is not None:
            history.append(total / steps)
    return model


def predict_class(model: nn.Mlp, x) -> np.ndarray:
    """Argmax of the softmax output; ties go to the lowest index."""
    x = x.features if isinstance(x, Dataset) else np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = np.argmax(softmax(nn.predict_logits(model, np.atleast_2d(x))), axis=1)
    return int(out[0]) if single else out


def accuracy(model: nn.Mlp, data: Dataset) -> float:
    if data.labels is None:
        raise ValueError("accuracy needs labels")
    return float(np.mean(predict_class(model, data) == data.labels))
