import math

import numpy as np
import pytest
from conftest import central_diff, rel_err

from lcoclust import kernels
from lcoclust.numerics import clamp_prob, softmax
from lcoclust.objective import (
    LcoConfig,
    contrastive_pair_cost,
    dense_batch_loss,
    dissimilar_pair_cost,
    hinge,
    pair_index_set,
    pair_mask,
    similar_pair_cost,
)


def test_similar_cost_examples(rng):
    assert similar_pair_cost([0.2, 0.8], [0.2, 0.8]) == 0.0
    # KL([1,0] || [.5,.5]) = ln 2; the reverse factor sees the floored zero
    reverse = 0.5 * math.log(0.5 / 1.0) + 0.5 * math.log(0.5 / 1e-7)
    assert similar_pair_cost([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2) + reverse, abs=1e-4)
    p, q = softmax(rng.normal(size=5)), softmax(rng.normal(size=5))
    assert similar_pair_cost(p, q) == similar_pair_cost(q, p)


def test_dissimilar_cost_examples():
    assert dissimilar_pair_cost([0.3, 0.7], [0.3, 0.7], 2.0) == 4.0
    assert dissimilar_pair_cost([1, 0], [0, 1], 2.0) == 0.0
    assert hinge(0.5, 2) == 1.5
    assert hinge(3, 2) == 0


def test_contrastive_selects(rng):
    p, q = softmax(rng.normal(size=4)), softmax(rng.normal(size=4))
    cfg = LcoConfig(sigma=2.0)
    assert contrastive_pair_cost(p, q, 1, cfg) == similar_pair_cost(p, q)
    assert contrastive_pair_cost(p, q, 0, cfg) == dissimilar_pair_cost(p, q, 2.0)
    assert contrastive_pair_cost(p, p, 1, cfg) == 0.0


def test_length_mismatch_raises():
    with pytest.raises(ValueError):
        similar_pair_cost([0.5, 0.5], [1.0])
    with pytest.raises(ValueError):
        dissimilar_pair_cost([0.5, 0.5], [1.0], 2.0)


def test_config_validation():
    assert LcoConfig() == LcoConfig(2.0, True, True)
    with pytest.raises(ValueError):
        LcoConfig(sigma=0.0)


def test_ten_samples_give_hundred_pairs(rng):
    res = dense_batch_loss(rng.normal(size=(10, 3)), np.eye(10))
    assert res.pair_count == 100
    assert len(pair_index_set(pair_mask(10))) == 100


def test_pair_set_options():
    assert np.count_nonzero(pair_mask(5, LcoConfig(include_self_pairs=False))) == 20
    assert np.count_nonzero(pair_mask(5, LcoConfig(include_both_orders=False))) == 15


def test_identical_samples_all_similar_zero(rng):
    row = rng.normal(size=4)
    res = dense_batch_loss(np.tile(row, (6, 1)), np.ones((6, 6)))
    assert res.loss == 0.0
    assert np.max(np.abs(res.grad_wrt_logits)) < 1e-12


def _pairwise_reference(logits, sims, cfg, mask):
    """Loss by explicit summation of contrastive_pair_cost over the pair set."""
    probs = softmax(logits)
    total = 0.0
    for p, q in zip(*np.nonzero(mask)):
        total += contrastive_pair_cost(probs[p], probs[q], int(sims[p, q]), cfg)
    return total


@pytest.mark.parametrize("seed", range(5))
def test_dense_loss_equals_pairwise_sum(seed):
    rng = np.random.default_rng(seed)
    n, k = 7, 4
    logits = rng.normal(scale=2.0, size=(n, k))
    sims = rng.random((n, n)) < 0.4
    mask = (rng.random((n, n)) < 0.7).astype(float)
    cfg = LcoConfig()
    res = dense_batch_loss(logits, sims, cfg, mask)
    assert res.loss == pytest.approx(_pairwise_reference(logits, sims, cfg, mask * pair_mask(n)), rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(6, 4))
    sims = rng.random((6, 6)) < 0.5
    res = dense_batch_loss(logits, sims)

    def frozen(z):
        return dense_batch_loss(z, sims, anchor_logits=logits).loss

    assert rel_err(res.grad_wrt_logits, central_diff(frozen, logits)) < 1e-4


def test_stop_gradient_closed_form(rng):
    # one similar ordered pair: KL(P0*||P1) + KL(P1*||P0); each factor moves only its live side
    z = rng.normal(size=(2, 5))
    mask = np.array([[0.0, 1.0], [0.0, 0.0]])
    res = dense_batch_loss(z, np.ones((2, 2)), mask=mask)
    p = softmax(z)
    np.testing.assert_allclose(res.grad_wrt_logits[1], p[1] - p[0], atol=1e-12)
    np.testing.assert_allclose(res.grad_wrt_logits[0], p[0] - p[1], atol=1e-12)


def test_stop_gradient_differs_from_full_derivative(rng):
    z = rng.normal(size=(4, 3))
    sims = np.eye(4, dtype=bool) | (rng.random((4, 4)) < 0.5)
    res = dense_batch_loss(z, sims)
    full = central_diff(lambda x: dense_batch_loss(x, sims).loss, z)
    frozen = central_diff(lambda x: dense_batch_loss(x, sims, anchor_logits=z).loss, z)
    assert rel_err(res.grad_wrt_logits, frozen) < 1e-4
    assert rel_err(res.grad_wrt_logits, full) > 1e-2


def test_anchor_moves_only_the_target(rng):
    # with a perturbed anchor, each sample is pulled toward the other's anchor distribution
    z = rng.normal(size=(2, 3))
    anchor = z + rng.normal(size=(2, 3))
    mask = np.array([[0.0, 1.0], [0.0, 0.0]])
    sims = np.ones((2, 2))
    res = dense_batch_loss(z, sims, mask=mask, anchor_logits=anchor)
    p, a = softmax(z), softmax(anchor)
    np.testing.assert_allclose(res.grad_wrt_logits[1], p[1] - a[0], atol=1e-12)
    np.testing.assert_allclose(res.grad_wrt_logits[0], p[0] - a[1], atol=1e-12)
    fd = central_diff(lambda x: dense_batch_loss(x, sims, mask=mask, anchor_logits=anchor).loss, z)
    assert rel_err(res.grad_wrt_logits, fd) < 1e-4


def test_self_pair_contributes_nothing(rng):
    z = rng.normal(size=(1, 5))
    res = dense_batch_loss(z, np.ones((1, 1)))
    assert res.loss == 0.0
    assert np.max(np.abs(res.grad_wrt_logits)) < 1e-12


def test_cluster_permutation_invariance(rng):
    z = rng.normal(size=(8, 5))
    sims = rng.random((8, 8)) < 0.3
    perm = rng.permutation(5)
    a = dense_batch_loss(z, sims)
    b = dense_batch_loss(z[:, perm], sims)
    assert a.loss == pytest.approx(b.loss, rel=1e-12)
    np.testing.assert_allclose(a.grad_wrt_logits[:, perm], b.grad_wrt_logits, atol=1e-12)


def test_dissimilar_pair_beyond_margin_costs_nothing():
    z = np.array([[20.0, 0.0, 0.0], [0.0, 20.0, 0.0]])
    res = dense_batch_loss(z, np.eye(2))
    assert res.loss == 0.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        dense_batch_loss(np.zeros((3, 2)), np.ones((4, 4)))


def test_numba_and_numpy_kernels_agree(rng):
    n, k = 12, 5
    star = clamp_prob(softmax(rng.normal(size=(n, k))))
    live = clamp_prob(softmax(rng.normal(size=(n, k))))
    sims = rng.random((n, n)) < 0.4
    mask = (rng.random((n, n)) < 0.8).astype(float)
    args = (star, np.log(star), live, np.log(live), sims, mask, 2.0)
    l1, g1 = kernels.lco_pair_terms_numpy(*args)
    l2, g2 = kernels.lco_pair_terms_numba(*args)
    assert l1 == pytest.approx(l2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-12)
