"""Datasets: synthetic Gaussian mixtures, class splits, domain shifts, CSV input."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class CsvFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    class_names: tuple | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("features must be an N x d matrix")
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise ValueError(f"labels length {y.shape} does not match {x.shape[0]} samples")
            object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_count(self) -> int | None:
        if self.labels is None:
            return None
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx) -> "Dataset":
        y = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], y, self.class_names)

    def unlabeled(self) -> "Dataset":
        return Dataset(self.features)


@dataclass(frozen=True)
class GaussianMixtureSpec:
    classes: int = 10
    dims: int = 16
    samples_per_class: int = 100
    center_scale: float = 5.0
    noise_sigma: float = 1.0
    seed: int = 0
    # trailing pure-noise coordinates shared by all classes
    nuisance_dims: int = 0
    nuisance_sigma: float = 1.0
    # when set, samples are redrawn around the same centers from a separate stream
    sample_seed: int | None = None

    def __post_init__(self):
        if min(self.classes, self.dims, self.samples_per_class) < 1:
            raise ValueError("classes, dims and samples_per_class must be >= 1")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")
        if self.nuisance_dims < 0 or self.nuisance_sigma < 0:
            raise ValueError("nuisance settings must be non-negative")


@dataclass(frozen=True)
class DomainShiftSpec:
    rotation_seed: int | None = None
    translation_scale: float = 0.0
    extra_noise: float = 0.0
    # radians per rotation plane; pi/2 and a fresh basis gives a fully scrambled rotation
    rotation_angle: float = np.pi / 2

    def __post_init__(self):
        if self.translation_scale < 0 or self.extra_noise < 0:
            raise ValueError("shift scales must be non-negative")


def _uniform_ball(rng, n, d, radius):
    direction = rng.normal(size=(n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return direction * r


def gen_gaussian_mixture(spec: GaussianMixtureSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    centers = _uniform_ball(rng, spec.classes, spec.dims, spec.center_scale)
    if spec.sample_seed is not None:
        rng = np.random.default_rng([spec.seed, spec.sample_seed])
    labels = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    x = centers[labels] + rng.normal(scale=spec.noise_sigma, size=(labels.size, spec.dims))
    if spec.nuisance_dims:
        extra = rng.normal(scale=spec.nuisance_sigma, size=(labels.size, spec.nuisance_dims))
        x = np.hstack([x, extra])
    return Dataset(x, labels)


def mixture_centers(spec: GaussianMixtureSpec) -> np.ndarray:
    """Class centers drawn by :func:`gen_gaussian_mixture` for the same spec."""
    rng = np.random.default_rng(spec.seed)
    return _uniform_ball(rng, spec.classes, spec.dims, spec.center_scale)


def split_classes(d: Dataset, source_classes) -> tuple[Dataset, Dataset]:
    """Split by class membership; ids are remapped to 0.. in each part, in ascending order."""
    if d.labels is None:
        raise ValueError("split_classes needs a labeled dataset")
    present = np.unique(d.labels)
    source = np.unique(np.asarray(list(source_classes), dtype=np.int64))
    unknown = np.setdiff1d(source, present)
    if unknown.size:
        raise ValueError(f"unknown class ids: {unknown.tolist()}")
    target = np.setdiff1d(present, source)
    if source.size == 0 or target.size == 0:
        raise ValueError("both sides of a class split must be non-empty")

    def take(classes):
        keep = np.isin(d.labels, classes)
        remap = np.full(present.max() + 1, -1, dtype=np.int64)
        remap[classes] = np.arange(classes.size)
        names = None
        if d.class_names is not None:
            names = tuple(d.class_names[c] for c in classes)
        return Dataset(d.features[keep], remap[d.labels[keep]], names)

    return take(source), take(target)


def _random_rotation(rng, d, angle):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q *= np.sign(np.diag(r))
    c, s = np.cos(angle), np.sin(angle)
    block = np.eye(d)
    for i in range(0, d - 1, 2):
        block[i:i + 2, i:i + 2] = [[c, -s], [s, c]]
    return q @ block @ q.T


def apply_domain_shift(d: Dataset, spec: DomainShiftSpec) -> Dataset:
    """Seeded rotation, then translation of norm ``translation_scale``, then noise."""
    x = d.features
    seed = 0 if spec.rotation_seed is None else spec.rotation_seed
    rng = np.random.default_rng([seed, 7])
    if spec.rotation_seed is not None and spec.rotation_angle != 0.0:
        x = x @ _random_rotation(rng, d.dim, spec.rotation_angle).T
    if spec.translation_scale > 0:
        direction = rng.normal(size=d.dim)
        x = x + spec.translation_scale * direction / np.linalg.norm(direction)
    if spec.extra_noise > 0:
        x = x + rng.normal(scale=spec.extra_noise, size=x.shape)
    return replace(d, features=x)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def apply_normalization(d: Dataset, stats: NormStats) -> Dataset:
    return replace(d, features=(d.features - stats.mean) / stats.std)


def normalize(d: Dataset) -> tuple[Dataset, NormStats]:
    if len(d) < 2:
        raise ValueError("normalize needs at least two samples")
    stats = NormStats(d.features.mean(axis=0), np.maximum(d.features.std(axis=0), 1e-8))
    return apply_normalization(d, stats), stats


def sample_balanced_batch(d: Dataset, classes_per_batch: int, batch_size: int, rng) -> np.ndarray:
    """Indices of a shuffled batch with ``batch_size // classes_per_batch`` samples per class."""
    if d.labels is None:
        raise ValueError("class-balanced sampling needs labels")
    if classes_per_batch < 1 or batch_size % classes_per_batch:
        raise ValueError("classes_per_batch must divide batch_size")
    classes = np.unique(d.labels)
    if classes_per_batch > classes.size:
        raise ValueError(f"requested {classes_per_batch} classes, dataset has {classes.size}")
    per_class = batch_size // classes_per_batch
    chosen = rng.choice(classes, size=classes_per_batch, replace=False)
    parts = []
    for c in chosen:
        members = np.flatnonzero(d.labels == c)
        if members.size < per_class:
            raise ValueError(f"class {c} has {members.size} samples, batch needs {per_class}")
        parts.append(rng.choice(members, size=per_class, replace=False))
    idx = np.concatenate(parts)
    rng.shuffle(idx)
    return idx


def load_csv(path) -> Dataset:
    """Read a headed CSV of float features with an optional trailing ``label`` column."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, 1, "missing header row") from None
        header = [h.strip() for h in header]
        has_label = bool(header) and header[-1].lower() == "label"
        width = len(header)
        n_feat = width - 1 if has_label else width
        rows, raw_labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise CsvFormatError(path, line, f"expected {width} fields, found {len(row)}")
            try:
                rows.append([float(v) for v in row[:n_feat]])
            except ValueError as exc:
                raise CsvFormatError(path, line, str(exc)) from None
            if has_label:
                raw_labels.append(row[-1].strip())
    x = np.asarray(rows, dtype=np.float64).reshape(len(rows), n_feat)
    if not has_label:
        return Dataset(x)
    ids: dict[str, int] = {}
    y = np.array([ids.setdefault(v, len(ids)) for v in raw_labels], dtype=np.int64)
    return Dataset(x, y, tuple(ids))


def save_csv(path, d: Dataset) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [f"f{i}" for i in range(d.dim)]
        if d.labels is not None:
            header.append("label")
        w.writerow(header)
        for i in range(len(d)):
            row = [repr(float(v)) for v in d.features[i]]
            if d.labels is not None:
                row.append(str(d.class_names[d.labels[i]] if d.class_names else d.labels[i]))
            w.writerow(row)
