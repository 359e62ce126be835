"""End-to-end runs shared by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import net as nn
from .clustering import CcnConfig, assign_clusters, best_of_restarts, kmeans
from .data import (
    Dataset,
    DomainShiftSpec,
    GaussianMixtureSpec,
    apply_domain_shift,
    apply_normalization,
    gen_gaussian_mixture,
    normalize,
    split_classes,
)
from .metrics import acc, nmi
from .similarity import (
    LabelOracle,
    NetOracle,
    NoisyLabelOracle,
    NoisyOracleConfig,
    make_similarity_net,
    train_similarity_net,
)
from .xdomain import CdConfig, accuracy, train_ccn_plus, train_source_only


@dataclass(frozen=True)
class SimTraining:
    feature_hidden: tuple[int, ...] = (64,)
    embed_dim: int = 32
    pair_hidden: int = 64
    sgd: nn.SgdConfig = field(default_factory=lambda: nn.SgdConfig(0.1, 0.9, epochs=20, batch_size=100))
    classes_per_batch: int | None = None
    batches_per_epoch: int | None = None


def fit_similarity(aux, sim: SimTraining, seed: int):
    net = make_similarity_net(aux.dim, sim.feature_hidden, sim.embed_dim, sim.pair_hidden, seed=seed)
    cpb = sim.classes_per_batch or aux.class_count
    train_similarity_net(aux, net, sim.sgd, cpb, seed=seed, batches_per_epoch=sim.batches_per_epoch)
    return net


# ---------------------------------------------------------------------------
# noisy-oracle sweep cell
# ---------------------------------------------------------------------------


def sweep_cell(features, labels, similar_recall, dissimilar_recall, density, k_out, ccn: CcnConfig):
    """Best-of-restarts CCN on one grid point; returns (nmi, acc, final_loss)."""
    data = Dataset(features)
    oracle = NoisyLabelOracle(labels, NoisyOracleConfig(similar_recall, dissimilar_recall, seed=ccn.seed))
    cfg = replace(ccn, k_out=k_out, density=density)
    model, losses = best_of_restarts(data, oracle, cfg)
    pred = assign_clusters(model, data)
    return nmi(pred, labels), acc(pred, labels), min(losses)


# ---------------------------------------------------------------------------
# cross-task: similarity learned on source classes, clustering on disjoint target classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossTaskSetup:
    data: GaussianMixtureSpec = GaussianMixtureSpec(
        classes=10, dims=4, samples_per_class=200, center_scale=4.0, nuisance_dims=16, nuisance_sigma=3.0)
    source_classes: tuple[int, ...] = (0, 1, 2, 3, 4)
    sim: SimTraining = SimTraining(classes_per_batch=5)
    ccn: CcnConfig = field(default_factory=lambda: CcnConfig(
        k_out=5, restarts=3, sgd=nn.SgdConfig(0.1, 0.9, epochs=50, batch_size=100)))


def run_cross_task(setup: CrossTaskSetup, seed: int) -> dict:
    d, _ = normalize(gen_gaussian_mixture(replace(setup.data, seed=seed)))
    src, tgt = split_classes(d, setup.source_classes)
    net = fit_similarity(src, setup.sim, seed)
    km = kmeans(tgt.features, tgt.class_count, seed=seed)
    cfg = replace(setup.ccn, k_out=tgt.class_count, seed=seed)
    model, _ = best_of_restarts(tgt.unlabeled(), NetOracle(net), cfg)
    pred = assign_clusters(model, tgt)
    return {
        "seed": seed,
        "ccn_nmi": nmi(pred, tgt.labels), "ccn_acc": acc(pred, tgt.labels),
        "kmeans_nmi": nmi(km, tgt.labels), "kmeans_acc": acc(km, tgt.labels),
    }


# ---------------------------------------------------------------------------
# cross-domain: shared classes, rotated target domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossDomainSetup:
    data: GaussianMixtureSpec = GaussianMixtureSpec(classes=10, dims=16, samples_per_class=100, center_scale=10.0)
    shift: DomainShiftSpec = DomainShiftSpec(rotation_seed=0, rotation_angle=0.9)
    # auxiliary classes for the similarity net; many classes make it transfer
    aux_classes: int = 200
    aux_samples_per_class: int = 10
    sim: SimTraining = SimTraining(classes_per_batch=10)
    cd: CdConfig = field(default_factory=lambda: CdConfig(batches_per_epoch=20))
    warm_start: bool = True


def run_cross_domain(setup: CrossDomainSetup, seed: int) -> dict:
    """Train source-only and CCN+ with shared seeds; report accuracies."""
    spec = replace(setup.data, seed=seed)
    source, stats = normalize(gen_gaussian_mixture(spec))
    raw_target = gen_gaussian_mixture(replace(spec, sample_seed=1))
    shift = replace(setup.shift, rotation_seed=seed if setup.shift.rotation_seed is not None else None)
    target = apply_normalization(apply_domain_shift(raw_target, shift), stats)
    aux_spec = replace(spec, classes=setup.aux_classes, samples_per_class=setup.aux_samples_per_class,
                       seed=seed + 500, sample_seed=None)
    aux = apply_normalization(gen_gaussian_mixture(aux_spec), stats)
    oracle = NetOracle(fit_similarity(aux, setup.sim, seed))
    cfg = replace(setup.cd, k_out=source.class_count, seed=seed)
    source_only = train_source_only(source, cfg)
    plus = train_ccn_plus(source, target.unlabeled(), oracle, cfg,
                          init=source_only if setup.warm_start else None)
    so, cp = accuracy(source_only, target), accuracy(plus, target)
    return {
        "seed": seed,
        "source_acc": accuracy(source_only, source),
        "target_acc_source_only": so,
        "target_acc_ccn_plus": cp,
        "gain": cp - so,
    }


def perfect_oracle_run(spec: GaussianMixtureSpec, ccn: CcnConfig):
    """Normalized mixture clustered with ground-truth pair labels. Returns (model, data, metrics)."""
    d, _ = normalize(gen_gaussian_mixture(spec))
    oracle = LabelOracle(d.labels)
    model, losses = best_of_restarts(d.unlabeled(), oracle, ccn)
    pred = assign_clusters(model, d)
    return model, d, {"nmi": nmi(pred, d.labels), "acc": acc(pred, d.labels), "final_loss": min(losses)}

