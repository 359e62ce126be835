"""Command line: train-sim, cluster, sweep, xdomain, eval.

Exit codes: 0 success, 2 configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import net as nn
from .clustering import CcnConfig, assign_clusters, best_of_restarts, cluster_sizes, estimate_ndc
from .data import Dataset, DomainShiftSpec, GaussianMixtureSpec, gen_gaussian_mixture, load_csv, normalize
from .experiments import CrossDomainSetup, SimTraining, fit_similarity, run_cross_domain, sweep_cell
from .metrics import acc, nmi
from .objective import LcoConfig
from .similarity import (
    LabelOracle,
    NetOracle,
    NoisyLabelOracle,
    NoisyOracleConfig,
    SimilarityNet,
    pair_label_from_classes,
    pairwise_quality,
    predict_pairs,
)
from .xdomain import CdConfig

log = logging.getLogger("lcoclust")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
DEFAULT_RECALLS = [round(0.1 * i, 1) for i in range(11)]


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SgdCfg(Strict):
    learning_rate: float = Field(0.1, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    epochs: int = Field(15, ge=1)
    batch_size: int = Field(256, ge=1)

    def build(self) -> nn.SgdConfig:
        return nn.SgdConfig(self.learning_rate, self.momentum, self.epochs, self.batch_size)


class SimSgdCfg(SgdCfg):
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(100, ge=1)


class CcnSgdCfg(SgdCfg):
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(100, ge=1)


class SyntheticCfg(Strict):
    classes: int = Field(10, ge=1)
    dims: int = Field(16, ge=1)
    samples_per_class: int = Field(100, ge=1)
    center_scale: float = Field(6.0, ge=0)
    noise_sigma: float = Field(1.0, gt=0)
    nuisance_dims: int = Field(0, ge=0)
    nuisance_sigma: float = Field(1.0, ge=0)
    # None: use the run seed
    seed: int | None = None

    def spec(self, run_seed: int) -> GaussianMixtureSpec:
        fields = self.model_dump(exclude={"seed"})
        return GaussianMixtureSpec(**fields, seed=run_seed if self.seed is None else self.seed)


class DataCfg(Strict):
    csv: str | None = None
    synthetic: SyntheticCfg | None = None
    normalize: bool = True
    # keep only these class ids (applied after normalization)
    classes: list[int] | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.csv is None) == (self.synthetic is None):
            raise ValueError("exactly one of 'csv' or 'synthetic' must be given")
        return self


class SimModelCfg(Strict):
    feature_hidden: list[int] = [64]
    embed_dim: int = Field(32, ge=1)
    pair_hidden: int = Field(64, ge=1)


class TrainSimConfig(Strict):
    data: DataCfg
    model: SimModelCfg = SimModelCfg()
    sgd: SimSgdCfg = SimSgdCfg()
    classes_per_batch: int | None = Field(None, ge=1)
    batches_per_epoch: int | None = Field(None, ge=1)
    holdout_fraction: float = Field(0.2, ge=0, lt=1)
    seed: int = 0


class CcnCfg(Strict):
    k_out: int = Field(10, ge=2)
    hidden_dims: list[int] = [64]
    sgd: CcnSgdCfg = CcnSgdCfg()
    restarts: int = Field(5, ge=1)
    density: float = Field(1.0, gt=0, le=1)
    sigma: float = Field(2.0, gt=0)
    batches_per_epoch: int | None = Field(None, ge=1)

    def build(self, seed: int) -> CcnConfig:
        return CcnConfig(self.k_out, tuple(self.hidden_dims), self.sgd.build(), self.restarts,
                         self.density, seed, LcoConfig(sigma=self.sigma), self.batches_per_epoch)


class OracleCfg(Strict):
    kind: Literal["labels", "noisy", "model"]
    similar_recall: float = Field(1.0, ge=0, le=1)
    dissimilar_recall: float = Field(1.0, ge=0, le=1)
    model: str | None = None

    @model_validator(mode="after")
    def _model_path(self):
        if self.kind == "model" and not self.model:
            raise ValueError("oracle kind 'model' needs a 'model' path")
        return self


class ClusterConfig(Strict):
    data: DataCfg
    oracle: OracleCfg
    ccn: CcnCfg = CcnCfg()
    seed: int = 0


class SweepConfig(Strict):
    data: DataCfg = DataCfg(synthetic=SyntheticCfg())
    similar_recalls: list[float] = Field(default_factory=lambda: list(DEFAULT_RECALLS), min_length=1)
    dissimilar_recalls: list[float] = Field(default_factory=lambda: list(DEFAULT_RECALLS), min_length=1)
    densities: list[float] = Field(default_factory=lambda: [1.0, 0.1], min_length=1)
    k_outs: list[int] = Field(default_factory=lambda: [10, 100], min_length=1)
    ccn: CcnCfg = CcnCfg()
    # per-k_out learning rate, overriding ccn.sgd.learning_rate
    learning_rate_by_k: dict[int, float] = Field(default_factory=lambda: {100: 2.0})
    seed: int = 0

    @model_validator(mode="after")
    def _axes(self):
        for name in ("similar_recalls", "dissimilar_recalls"):
            if any(not 0.0 <= r <= 1.0 for r in getattr(self, name)):
                raise ValueError(f"{name} values must lie in [0, 1]")
        if any(not 0.0 < d <= 1.0 for d in self.densities):
            raise ValueError("densities must lie in (0, 1]")
        if any(k < 2 for k in self.k_outs):
            raise ValueError("k_outs must be >= 2")
        if any(lr <= 0 for lr in self.learning_rate_by_k.values()):
            raise ValueError("learning rates must be positive")
        return self


class ShiftCfg(Strict):
    rotation_angle: float = 0.9
    translation_scale: float = Field(0.0, ge=0)
    extra_noise: float = Field(0.0, ge=0)


class AuxCfg(Strict):
    classes: int = Field(200, ge=2)
    samples_per_class: int = Field(10, ge=1)


class SimCfg(Strict):
    model: SimModelCfg = SimModelCfg()
    sgd: SimSgdCfg = SimSgdCfg()
    classes_per_batch: int = Field(10, ge=1)
    batches_per_epoch: int | None = Field(None, ge=1)


class CdCfg(Strict):
    hidden_dims: list[int] = [64]
    sgd: SgdCfg = SgdCfg()
    source_batch: int = Field(32, ge=0)
    target_batch: int = Field(96, ge=0)
    batches_per_epoch: int | None = Field(20, ge=1)
    sigma: float = Field(2.0, gt=0)
    warm_start: bool = True


class XdomainConfig(Strict):
    setting: str = "synthetic-rotation"
    data: SyntheticCfg = SyntheticCfg(center_scale=10.0)
    shift: ShiftCfg = ShiftCfg()
    aux: AuxCfg = AuxCfg()
    similarity: SimCfg = SimCfg()
    cd: CdCfg = CdCfg()
    runs: int = Field(5, ge=1)
    seed: int = 0


class EvalConfig(Strict):
    pred: str
    truth: str


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{float(v):.6f}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def load_config(model, path: str | None):
    """Parse and validate a JSON config file (or defaults when ``path`` is None)."""
    if path is None:
        raw = {}
    else:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return validate_config(model, raw)


def validate_config(model, raw: dict):
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        lines = [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from None


def load_data(cfg: DataCfg, seed: int, base: Path | None) -> Dataset:
    if cfg.csv is not None:
        p = _resolve(cfg.csv, base)
        if not p.is_file():
            raise ConfigError(f"data.csv: file not found: {p}")
        d = load_csv(p)
    else:
        d = gen_gaussian_mixture(cfg.synthetic.spec(seed))
    if cfg.normalize:
        d = normalize(d)[0]
    if cfg.classes is not None:
        if d.labels is None:
            raise ConfigError("data.classes: dataset has no labels")
        keep = np.isin(d.labels, cfg.classes)
        if not keep.any():
            raise ConfigError("data.classes: no rows match")
        d = d.subset(np.flatnonzero(keep))
    return d


def _ensure_out(out: str) -> Path:
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train_sim(cfg: TrainSimConfig, out: Path, base, workers: int) -> None:
    d = load_data(cfg.data, cfg.seed, base)
    if d.labels is None:
        raise ConfigError("data: train-sim needs a labeled dataset")
    rng = np.random.default_rng([cfg.seed, 3])
    order = rng.permutation(len(d))
    n_hold = int(round(cfg.holdout_fraction * len(d)))
    hold, train = np.sort(order[:n_hold]), np.sort(order[n_hold:])
    train_d = d.subset(train)
    train_d = Dataset(train_d.features, np.unique(train_d.labels, return_inverse=True)[1].ravel())
    sim = SimTraining(tuple(cfg.model.feature_hidden), cfg.model.embed_dim, cfg.model.pair_hidden,
                      cfg.sgd.build(), cfg.classes_per_batch, cfg.batches_per_epoch)
    try:
        net = fit_similarity(train_d, sim, cfg.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    net.save(out / "similarity.lcomlp")
    rows = []
    for name, idx in (("train", train[:1000]), ("holdout", hold[:1000])):
        if idx.size < 2:
            continue
        q = pairwise_quality(predict_pairs(net, d.features[idx]), pair_label_from_classes(d.labels[idx]))
        rows.append((name, idx.size, *q.as_tuple()))
    write_csv(out / "quality.csv",
              ["split", "n", "similar_precision", "similar_recall", "dissimilar_precision", "dissimilar_recall"],
              rows)
    for r in rows:
        log.info("quality %s: %s", r[0], " ".join(_fmt(v) for v in r[2:]))


def _make_oracle(cfg: OracleCfg, d: Dataset, seed: int, base):
    if cfg.kind == "model":
        p = _resolve(cfg.model, base)
        if not p.is_file():
            raise ConfigError(f"oracle.model: file not found: {p}")
        return NetOracle(SimilarityNet.load(p))
    if d.labels is None:
        raise ConfigError(f"oracle.kind '{cfg.kind}' needs labeled data")
    if cfg.kind == "labels":
        return LabelOracle(d.labels)
    return NoisyLabelOracle(d.labels, NoisyOracleConfig(cfg.similar_recall, cfg.dissimilar_recall, seed=seed))


def cmd_cluster(cfg: ClusterConfig, out: Path, base, workers: int) -> None:
    d = load_data(cfg.data, cfg.seed, base)
    oracle = _make_oracle(cfg.oracle, d, cfg.seed, base)
    ccn = cfg.ccn.build(cfg.seed)
    data = d.unlabeled()
    model, losses = best_of_restarts(data, oracle, ccn)
    pred = assign_clusters(model, data)
    nn.save(out / "ccn.lcomlp", model)
    write_csv(out / "assignments.csv", ["row", "cluster"], enumerate(pred.tolist()))
    ndc = estimate_ndc(cluster_sizes(pred, ccn.k_out))
    scores = (nmi(pred, d.labels), acc(pred, d.labels)) if d.labels is not None else (None, None)
    write_csv(out / "metrics.csv", ["n", "k_out", "nmi", "acc", "ndc", "final_loss"],
              [(len(d), ccn.k_out, *scores, ndc, min(losses))])
    log.info("cluster: nmi=%s acc=%s ndc=%d", _fmt(scores[0]), _fmt(scores[1]), ndc)


def _cell_task(args):
    features, labels, sr, dr, density, k, ccn = args
    return sweep_cell(features, labels, sr, dr, density, k, ccn)


def heatmap_text(values: np.ndarray, similar, dissimilar) -> str:
    """NMI grid: rows are similar recall descending, columns dissimilar recall ascending."""
    rows_order = np.argsort(similar)[::-1]
    cols_order = np.argsort(dissimilar)
    lines = ["# rows: similar_recall " + " ".join(f"{similar[i]:.2f}" for i in rows_order),
             "# cols: dissimilar_recall " + " ".join(f"{dissimilar[j]:.2f}" for j in cols_order)]
    for i in rows_order:
        lines.append(" ".join(f"{values[i, j]:.4f}" for j in cols_order))
    return "\n".join(lines) + "\n"


def bright_cells(grid_text: str, threshold: float = 0.8) -> int:
    """Count grid entries above ``threshold`` in a heatmap text file."""
    rows = [ln.split() for ln in grid_text.splitlines() if ln and not ln.startswith("#")]
    return int(sum(float(v) > threshold for r in rows for v in r))


def cmd_sweep(cfg: SweepConfig, out: Path, base, workers: int) -> None:
    d = load_data(cfg.data, cfg.seed, base)
    if d.labels is None:
        raise ConfigError("data: sweep needs labeled data to simulate oracles")
    base_ccn = cfg.ccn.build(cfg.seed)
    cells = []
    for density in cfg.densities:
        for k in cfg.k_outs:
            lr = cfg.learning_rate_by_k.get(k, cfg.ccn.sgd.learning_rate)
            ccn = replace(base_ccn, sgd=replace(base_ccn.sgd, learning_rate=lr))
            for sr in cfg.similar_recalls:
                for dr in cfg.dissimilar_recalls:
                    cells.append((density, k, sr, dr, ccn))
    log.info("sweep: %d cells on %d worker(s)", len(cells), workers)
    tasks = [(d.features, d.labels, sr, dr, density, k, ccn) for density, k, sr, dr, ccn in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_task, tasks))
    else:
        results = []
        for i, t in enumerate(tasks):
            results.append(_cell_task(t))
            log.debug("cell %d/%d done", i + 1, len(tasks))
    write_csv(out / "sweep.csv",
              ["cell", "similar_recall", "dissimilar_recall", "density", "k_out", "nmi", "acc", "final_loss"],
              [(i, sr, dr, density, k, *res) for i, ((density, k, sr, dr, _), res) in enumerate(zip(cells, results))])
    ns, nd = len(cfg.similar_recalls), len(cfg.dissimilar_recalls)
    per_block = ns * nd
    for b, (density, k) in enumerate((dd, kk) for dd in cfg.densities for kk in cfg.k_outs):
        grid = np.array([r[0] for r in results[b * per_block:(b + 1) * per_block]]).reshape(ns, nd)
        text = heatmap_text(grid, cfg.similar_recalls, cfg.dissimilar_recalls)
        (out / f"heatmap_density{density:g}_k{k}.txt").write_text(text)


def cmd_xdomain(cfg: XdomainConfig, out: Path, base, workers: int) -> None:
    data = cfg.data.spec(0)
    setup = CrossDomainSetup(
        data=data,
        shift=DomainShiftSpec(rotation_seed=0, rotation_angle=cfg.shift.rotation_angle,
                              translation_scale=cfg.shift.translation_scale, extra_noise=cfg.shift.extra_noise),
        aux_classes=cfg.aux.classes,
        aux_samples_per_class=cfg.aux.samples_per_class,
        sim=SimTraining(tuple(cfg.similarity.model.feature_hidden), cfg.similarity.model.embed_dim,
                        cfg.similarity.model.pair_hidden, cfg.similarity.sgd.build(),
                        cfg.similarity.classes_per_batch, cfg.similarity.batches_per_epoch),
        cd=CdConfig(k_out=data.classes, hidden_dims=tuple(cfg.cd.hidden_dims), sgd=cfg.cd.sgd.build(),
                    source_batch=cfg.cd.source_batch, target_batch=cfg.cd.target_batch,
                    lco=LcoConfig(sigma=cfg.cd.sigma), batches_per_epoch=cfg.cd.batches_per_epoch),
        warm_start=cfg.cd.warm_start,
    )
    seeds = [cfg.seed + i for i in range(cfg.runs)]
    if cfg.data.seed is not None:
        log.info("xdomain: data.seed is ignored; each run uses its own seed")
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(run_cross_domain, [setup] * len(seeds), seeds))
        else:
            rows = [run_cross_domain(setup, s) for s in seeds]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    cols = ["seed", "source_acc", "target_acc_source_only", "target_acc_ccn_plus", "gain"]
    write_csv(out / "xdomain.csv", ["setting", *cols], [(cfg.setting, *(r[c] for c in cols)) for r in rows])
    gains = [r["gain"] for r in rows]
    log.info("xdomain: median gain %.4f over %d run(s)", float(np.median(gains)), len(gains))


def read_label_column(path: Path) -> list[str]:
    """Last column of a CSV file with a header row."""
    if not path.is_file():
        raise ConfigError(f"label file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"{path}: need a header and at least one row")
    return [r[-1] for r in rows[1:] if r]


def cmd_eval(cfg: EvalConfig, out: Path, base, workers: int) -> None:
    pred = read_label_column(_resolve(cfg.pred, base))
    truth = read_label_column(_resolve(cfg.truth, base))
    if len(pred) != len(truth):
        raise ConfigError(f"label files differ in length: {len(pred)} vs {len(truth)}")
    row = (len(pred), nmi(pred, truth), acc(pred, truth), len(set(pred)), len(set(truth)))
    header = ["n", "nmi", "acc", "pred_clusters", "true_classes"]
    write_csv(out / "eval.csv", header, [row])
    print(",".join(header))
    print(",".join(_fmt(v) for v in row))


COMMANDS = {
    "train-sim": (TrainSimConfig, cmd_train_sim, "train a pairwise similarity network"),
    "cluster": (ClusterConfig, cmd_cluster, "cluster data with a similarity oracle"),
    "sweep": (SweepConfig, cmd_sweep, "noisy-oracle grid sweep with heatmaps"),
    "xdomain": (XdomainConfig, cmd_xdomain, "source-only vs CCN+ on shifted synthetic data"),
    "eval": (EvalConfig, cmd_eval, "NMI and ACC between two label files"),
}

# commands that may run without a config file
CONFIG_OPTIONAL = {"sweep", "xdomain", "eval"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcoclust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")
        if name == "eval":
            p.add_argument("--pred", help="CSV whose last column holds predicted cluster ids")
            p.add_argument("--truth", help="CSV whose last column holds true labels")
    return parser


def setup_logging() -> None:
    level_name = os.environ.get("LCO_LOG_LEVEL", "error").lower()
    if level_name not in LOG_LEVELS:
        raise ConfigError(f"LCO_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    logging.basicConfig(level=LOG_LEVELS[level_name], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup_logging()
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        model, func, _ = COMMANDS[args.command]
        if args.config is None and args.command not in CONFIG_OPTIONAL:
            raise ConfigError(f"{args.command} needs --config")
        if args.command == "eval" and args.config is None:
            cfg = validate_config(model, {k: v for k, v in (("pred", args.pred), ("truth", args.truth)) if v})
        else:
            cfg = load_config(model, args.config)
            if args.command == "eval":
                updates = {k: v for k, v in (("pred", args.pred), ("truth", args.truth)) if v}
                cfg = cfg.model_copy(update=updates)
        if args.seed is not None and "seed" in type(cfg).model_fields:
            cfg = cfg.model_copy(update={"seed": args.seed})
        base = Path(args.config).resolve().parent if args.config else None
        out = _ensure_out(args.out)
        func(cfg, out, base, args.workers)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
