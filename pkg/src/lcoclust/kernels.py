"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names (``lco_pair_terms``, ``hungarian_square``, ``contingency``,
``nearest_center``) dispatch on :data:`lcoclust._accel.USE_NUMBA`. Both
flavours are importable directly (``*_numba`` / ``*_numpy``) so the test
suite and ``benchmarks/bench_kernels.py`` can compare them.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Dense pairwise LCO terms
# ---------------------------------------------------------------------------
#
# Inputs are clamped probabilities. ``star`` rows play the role of the
# constant (starred) distribution in each KL factor, ``live`` rows the
# differentiated one. In ordinary training both are the same array.
#
#   kl[a, b] = sum_c star[a, c] * (log star[a, c] - log live[b, c])
#
# Ordered pair (p, q) with label g contributes phi(kl[p, q], g) + phi(kl[q, p], g)
# where phi(e, 1) = e and phi(e, 0) = max(0, sigma - e). The returned gradient
# is with respect to the clamped ``live`` probabilities only.


def lco_pair_terms_numpy(star, log_star, live, log_live, sims, mask, sigma):
    ent = np.einsum("ij,ij->i", star, log_star)
    kl = ent[:, None] - star @ log_live.T
    sims = sims.astype(bool)
    hinge = np.maximum(0.0, sigma - kl)
    term_fwd = np.where(sims, kl, hinge)
    term_bwd = np.where(sims.T, kl, hinge)
    loss = float(np.sum(mask * term_fwd) + np.sum(mask.T * term_bwd))

    # d phi / d e: 1 for similar, -1 inside the hinge, 0 at/after the margin
    slope_dis = np.where(kl < sigma, -1.0, 0.0)
    w = mask * np.where(sims, 1.0, slope_dis) + mask.T * np.where(sims.T, 1.0, slope_dis)
    grad_live = -(w.T @ star) / live
    return loss, grad_live


def _lco_pair_terms_loop(star, log_star, live, log_live, sims, mask, sigma):
    n, k = star.shape
    kl = np.empty((n, n))
    for a in range(n):
        ent = 0.0
        for c in range(k):
            ent += star[a, c] * log_star[a, c]
        for b in range(n):
            cross = 0.0
            for c in range(k):
                cross += star[a, c] * log_live[b, c]
            kl[a, b] = ent - cross

    loss = 0.0
    w = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            e = kl[a, b]
            # pair (a, b) sees kl[a, b] as its forward term
            m = mask[a, b]
            if m != 0.0:
                if sims[a, b]:
                    loss += m * e
                    w[a, b] += m
                elif e < sigma:
                    loss += m * (sigma - e)
                    w[a, b] -= m
            # pair (b, a) sees kl[a, b] as its backward term
            m = mask[b, a]
            if m != 0.0:
                if sims[b, a]:
                    loss += m * e
                    w[a, b] += m
                elif e < sigma:
                    loss += m * (sigma - e)
                    w[a, b] -= m

    grad = np.zeros((n, k))
    for a in range(n):
        for b in range(n):
            wab = w[a, b]
            if wab != 0.0:
                for c in range(k):
                    grad[b, c] -= wab * star[a, c]
    for b in range(n):
        for c in range(k):
            grad[b, c] /= live[b, c]
    return loss, grad


lco_pair_terms_numba = njit(_lco_pair_terms_loop)


# ---------------------------------------------------------------------------
# Square min-cost assignment (shortest augmenting path with potentials)
# ---------------------------------------------------------------------------


def hungarian_square_numpy(cost):
    """Return ``col_of_row`` for the min-cost perfect matching of a square matrix."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 1-based row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            j1 = int(np.argmin(np.where(free, minv[1:], np.inf))) + 1
            delta = minv[j1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


def _hungarian_square_loop(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


hungarian_square_numba = njit(_hungarian_square_loop)


# ---------------------------------------------------------------------------
# Contingency counts and nearest-center search
# ---------------------------------------------------------------------------


def contingency_numpy(a, b, ka, kb):
    flat = np.bincount(a * kb + b, minlength=ka * kb)
    return flat.reshape(ka, kb).astype(np.int64)


def _contingency_loop(a, b, ka, kb):
    out = np.zeros((ka, kb), dtype=np.int64)
    for i in range(a.shape[0]):
        out[a[i], b[i]] += 1
    return out


contingency_numba = njit(_contingency_loop)


def nearest_center_numpy(x, centers):
    """Index of the nearest center per row and the squared distance to it."""
    d2 = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * x @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    idx = np.argmin(d2, axis=1)
    return idx.astype(np.int64), d2[np.arange(x.shape[0]), idx]


def _nearest_center_loop(x, centers):
    n, d = x.shape
    k = centers.shape[0]
    idx = np.zeros(n, dtype=np.int64)
    best = np.empty(n)
    for i in range(n):
        bd = np.inf
        bj = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - centers[j, t]
                s += diff * diff
            if s < bd:
                bd = s
                bj = j
        idx[i] = bj
        best[i] = bd
    return idx, best


nearest_center_numba = njit(_nearest_center_loop)


if USE_NUMBA:
    lco_pair_terms = lco_pair_terms_numba
    hungarian_square = hungarian_square_numba
    contingency = contingency_numba
    nearest_center = nearest_center_numba
else:
    lco_pair_terms = lco_pair_terms_numpy
    hungarian_square = hungarian_square_numpy
    contingency = contingency_numpy
    nearest_center = nearest_center_numpy
