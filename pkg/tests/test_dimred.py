import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrank_stealing.dimred import (build_vectors, check_kl_preserving, check_representative,
                                     perturbation_audit, sketch_distributions,
                                     sketch_distributions_merged, sketch_from_densities,
                                     trunc_kl_scalar, trunc_kl_vec)
from lowrank_stealing.evaluation import surrogate_future_dist
from lowrank_stealing.hmm import Hmm, random_hmm
from lowrank_stealing.oracle import LazyPdfTree
from oracles import trunc_kl_reference

probs = st.floats(0.0, 1.0, allow_nan=False)
levels = st.floats(1e-6, 1.0, allow_nan=False)


def test_trunc_kl_scalar_values():
    assert trunc_kl_scalar(0.5, 0.05, 0.1) == pytest.approx(0.5 * math.log(5), abs=1e-12)
    assert trunc_kl_scalar(0.5, 0.05, 0.1) == pytest.approx(0.80472, abs=1e-5)
    assert trunc_kl_scalar(0.3, 0.3, 0.7) == 0.0
    assert trunc_kl_scalar(0.05, 0.02, 0.1) == 0.0
    with pytest.raises(ValueError):
        trunc_kl_scalar(0.1, 0.2, 0.0)


def test_trunc_kl_vec_hand_value():
    assert trunc_kl_vec([0.5, 0.5], [0.05, 0.95], 0.1) == pytest.approx(0.48375, abs=1e-4)


def test_trunc_kl_vec_errors():
    with pytest.raises(ValueError):
        trunc_kl_vec([0.5, 0.5], [1.0], 0.1)
    with pytest.raises(ValueError):
        trunc_kl_vec([0.5, 0.5], [0.5, 0.5], [0.1, -0.1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(probs, probs, levels), min_size=1, max_size=20))
def test_trunc_kl_vec_matches_coordinate_loop(rows):
    u, v, w = (np.array(c) for c in zip(*rows))
    assert trunc_kl_vec(u, v, w) == pytest.approx(trunc_kl_reference(u, v, w), abs=1e-12)
    assert trunc_kl_vec(u, u, w) == pytest.approx(0.0, abs=1e-15)


def test_small_level_recovers_kl():
    rng = np.random.default_rng(0)
    p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    assert trunc_kl_vec(p, q, 1e-15) == pytest.approx(float(np.sum(p * np.log(p / q))), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(1e-4, 0.5), st.floats(0.0, 1.0), st.floats(1e-3, 0.2))
def test_monotone_in_second_argument(x, w, y, dy):
    if x > w:
        assert trunc_kl_scalar(x, y + dy, w) <= trunc_kl_scalar(x, y, w) + 1e-15


def test_lipschitz_in_first_argument():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = 5
        u, v = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
        w = rng.uniform(1e-3, 0.5, n)
        d = rng.standard_normal(n)
        d /= np.abs(d).sum()
        h = 1e-7
        slope = abs(trunc_kl_vec(np.clip(u + h * d, 0, None), v, w) - trunc_kl_vec(u, v, w)) / h
        L = (1 + math.log(1 + 1 / w.min()) + math.log(1 + w.max()) + math.log(1 + u.max())
             + math.log(1 + v.max()))
        assert slope <= L * (1 + 1e-6)


def test_single_history_sketch_is_uniform():
    tree = LazyPdfTree(random_hmm(2, 2, 4, 0), mode="exact-base")
    b = build_vectors(tree, 1, [(0,)], 50, np.random.default_rng(0))
    np.testing.assert_allclose(b.U[0], 1 / 50, rtol=1e-12)
    assert b.U[0].sum() == pytest.approx(1.0)


def test_sketch_entries_and_norms():
    hmm = random_hmm(2, 2, 5, 1)
    tree = LazyPdfTree(hmm, mode="exact-base")
    hs = [(0, 0), (0, 1), (1, 0), (1, 1)]
    b = build_vectors(tree, 2, hs, 5000, np.random.default_rng(2))
    assert b.U.shape == (4, 20_000) and len(b.X) == 20_000
    assert np.all(b.U >= 0) and np.all(b.U <= 1)
    assert np.all(np.abs(b.U.sum(axis=1) - 1) <= 0.05)
    # u_h = w * Pr[X | h] entrywise
    for i, h in enumerate(hs):
        dens = np.array([tree.cond_pdf(h, f) for f in b.X[:50]])
        np.testing.assert_allclose(b.U[i, :50], b.w[:50] * dens, rtol=1e-12)


def test_build_vectors_rejects_bad_input():
    tree = LazyPdfTree(random_hmm(1, 2, 3, 0), mode="exact-base")
    with pytest.raises(ValueError):
        build_vectors(tree, 1, [(0, 1)], 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_vectors(tree, 1, [(0,)], 0, np.random.default_rng(0))


def test_vanishing_density_guard():
    with pytest.raises(ValueError):
        sketch_from_densities(np.array([[0.5, 0.0]]), 10)


def test_check_representative_trivial_cases():
    rng = np.random.default_rng(3)
    D = rng.dirichlet(np.ones(8), size=3)
    X, U, w = sketch_distributions(D, 400, rng)
    e = np.eye(3)
    res = check_representative(D, U, 1, 1.0, 0, rng, coeffs=e)
    assert res.worst_gap == pytest.approx(np.abs(1 - U.sum(axis=1)).max())
    assert check_representative(D, U, 1, 1e-12, 0, rng, coeffs=np.zeros(3)).worst_gap == 0.0


def test_kl_check_equal_coefficients_give_zero():
    rng = np.random.default_rng(4)
    D = rng.dirichlet(np.ones(8), size=2)
    X, U, w = sketch_distributions(D, 500, rng)
    for _ in range(20):
        c = rng.uniform(-2, 2, 2)
        ts = rng.uniform(0.01, 1)
        assert trunc_kl_vec(c @ D, c @ D, ts) == 0.0
        assert trunc_kl_vec(c @ U, c @ U, ts * w) == 0.0


def test_full_clamping_gives_zero():
    rng = np.random.default_rng(5)
    for _ in range(20):
        u, v = rng.uniform(0, 1, 6), rng.uniform(0, 1, 6)
        assert trunc_kl_vec(u, v, 1.0) == 0.0


def test_merged_sketch_same_norms_as_full():
    rng = np.random.default_rng(6)
    D = rng.dirichlet(np.ones(16), size=3)
    X, U, w = sketch_distributions(D, 2000, np.random.default_rng(7))
    sup, Um, wm, mult = sketch_distributions_merged(D, 2000, np.random.default_rng(8))
    c = np.array([1.5, -2.0, 0.7])
    exact = np.abs(c @ D).sum()
    assert abs(np.abs(c @ U).sum() - exact) < 0.1
    assert abs(np.abs(c @ Um) @ mult - exact) < 0.1
    assert mult.sum() == 3 * 2000


def test_representative_and_kl_preserving_at_lemma_scale():
    rng = np.random.default_rng(9)
    m, r, gamma = 3, 3, 0.1
    k = round(100 * m * r**4 / gamma**2)
    D = rng.dirichlet(np.ones(16), size=m)
    _, U, w, mult = sketch_distributions_merged(D, k, rng)
    assert check_representative(D, U, r, gamma, 1000, rng, mult=mult).passed
    assert check_kl_preserving(D, U, w, r, gamma, 0.01, 300, rng, mult=mult).passed


def test_importance_sampling_unbiased():
    rng = np.random.default_rng(10)
    D = rng.dirichlet(np.ones(16), size=3)
    cs = rng.uniform(-3, 3, size=(20, 3))
    exact = np.abs(cs @ D).sum(axis=1)
    norms = []
    for _ in range(200):
        _, U, _ = sketch_distributions(D, 30, rng)
        norms.append(np.abs(cs @ U).sum(axis=1))
    norms = np.array(norms)
    se = norms.std(axis=0, ddof=1) / math.sqrt(len(norms))
    assert np.all(np.abs(norms.mean(axis=0) - exact) <= 3 * se)


def test_perturbation_audit_exact_base_is_zero():
    hmm = random_hmm(2, 2, 4, 2)
    tree = LazyPdfTree(hmm, mode="exact-base")
    d = perturbation_audit(hmm, tree, [(0,), (1,)], 200, np.random.default_rng(0))
    assert d <= 1e-9


def test_perturbation_audit_deterministic_emitter():
    emit = np.array([[1.0], [0.0]])
    hmm = Hmm(mu=[1.0], trans=[[1.0]], emit=emit, seq_len=3)
    tree = LazyPdfTree(hmm, eps=0.01, mode="exact-base")
    # only the floor moves mass; relative error on the forced string is tiny,
    # on the floored strings it is unbounded, so look at the forced one
    D = hmm.conditional_future_dist((0,))
    Dp = surrogate_future_dist(tree, (0,))
    assert abs(D[0] - Dp[0]) / D[0] <= 2 * 2 * tree.floor


def perturbed(hmm, eps, rng):
    emit = hmm.emit * (1 + eps * rng.uniform(-1, 1, size=hmm.emit.shape))
    return Hmm(mu=hmm.mu, trans=hmm.trans, emit=emit / emit.sum(axis=0), seq_len=hmm.T)


def test_perturbation_audit_small_eps():
    eps = 1e-4
    ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        hmm = random_hmm(2, 2, 4, seed)
        tree = LazyPdfTree(perturbed(hmm, eps, rng), eps=1e-3, mode="exact-base")
        d = perturbation_audit(hmm, tree, [(0,), (1,)], 100, rng)
        ok += d <= 1e-2
    assert ok >= 95

