"""Clustering evaluation: NMI, matched accuracy, optimal assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # predicted clusters x true classes
    row_labels: np.ndarray
    col_labels: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass(frozen=True)
class AssignmentSolution:
    matching: dict[int, int]  # row -> column, rows left unmatched by padding are absent
    total_cost: float


def _as_partition(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError("partitions must be 1-D label vectors")
    return a


def contingency_table(pred, truth) -> ContingencyTable:
    pred, truth = _as_partition(pred), _as_partition(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    rows, ri = np.unique(pred, return_inverse=True)
    cols, ci = np.unique(truth, return_inverse=True)
    counts = kernels.contingency(ri.astype(np.int64), ci.astype(np.int64), rows.size, cols.size)
    return ContingencyTable(counts, rows, cols)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(a, b) -> float:
    """Mutual information over the geometric mean of the two entropies (nats).

    Returns 0 when either partition has a single label.
    """
    table = contingency_table(a, b)
    n = table.n
    if n == 0:
        raise ValueError("nmi of empty partitions")
    ha = _entropy(table.row_marginals, n)
    hb = _entropy(table.col_marginals, n)
    if ha <= 0.0 or hb <= 0.0:
        return 0.0
    c = table.counts
    nz = c > 0
    outer = np.outer(table.row_marginals, table.col_marginals)
    mi = float(np.sum(c[nz] / n * np.log(c[nz] * n / outer[nz])))
    return float(np.clip(mi / np.sqrt(ha * hb), 0.0, 1.0))


def hungarian(cost) -> AssignmentSolution:
    """Minimum-cost one-to-one matching.

    Rectangular inputs are padded to square with zeros; rows or columns
    matched to padding are left out of ``matching``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    r, c = cost.shape
    size = max(r, c)
    if size == 0:
        return AssignmentSolution({}, 0.0)
    square = np.zeros((size, size))
    square[:r, :c] = cost
    col_of_row = kernels.hungarian_square(np.ascontiguousarray(square))
    matching = {int(i): int(j) for i, j in enumerate(col_of_row) if i < r and j < c}
    total = float(sum(cost[i, j] for i, j in matching.items()))
    return AssignmentSolution(matching, total)


def acc(pred, truth) -> float:
    """Accuracy under the best one-to-one cluster-to-class matching.

    Samples in clusters left unmatched count as errors.
    """
    table = contingency_table(pred, truth)
    if table.n == 0:
        raise ValueError("acc of empty partitions")
    sol = hungarian(-table.counts)
    matched = sum(int(table.counts[i, j]) for i, j in sol.matching.items())
    return matched / table.n
