import json

import numpy as np
import pytest

from lowrank_stealing.evaluation import tv_exact
from lowrank_stealing.hmm import Hmm, iid_hmm, random_hmm
from lowrank_stealing.learner import (FORMAT_VERSION, LearnedRepresentation, LearnParams,
                                      audit_representation, build_spanner_step, learn,
                                      next_char_table, spanner_threshold)
from lowrank_stealing.oracle import LazyPdfTree
from lowrank_stealing.sampler import Sampler
from lowrank_stealing.spanner import verify_spanner


def test_next_char_table_reads_tree():
    tree = LazyPdfTree(random_hmm(2, 2, 4, 0), samples_per_node=500)
    P = next_char_table(tree, [(1,)])
    np.testing.assert_array_equal(P[0], tree.weights((1,)))
    P = next_char_table(tree, [(0, 0), (0, 1), (1, 1)])
    assert np.all(P.sum(axis=1) == 1.0)


def test_next_char_table_deterministic_emitter():
    hmm = Hmm(mu=[1.0], trans=[[1.0]], emit=[[1.0], [0.0]], seq_len=3)
    tree = LazyPdfTree(hmm, eps=0.01, mode="exact-base")
    P = next_char_table(tree, [(0,)])
    assert P[0, 1] == pytest.approx(tree.floor, rel=1e-9)
    assert P[0, 0] == pytest.approx(1 - tree.floor, rel=1e-12)


def test_next_char_table_rejects_mixed_lengths():
    tree = LazyPdfTree(random_hmm(1, 2, 3, 0), mode="exact-base")
    with pytest.raises(ValueError):
        next_char_table(tree, [(0,), (0, 1)])
    with pytest.raises(ValueError):
        next_char_table(tree, [])


def test_threshold_floor():
    assert spanner_threshold(0.05, 2, 512) == pytest.approx(0.05 / (200 * 512**2))
    assert spanner_threshold(0.05, 2, 10**6) == 1e-12
    assert spanner_threshold(1.0, 1, 2) == pytest.approx(1 / 400)


def test_spanner_step_rank_one():
    tree = LazyPdfTree(iid_hmm([0.3, 0.7], 4), mode="exact-base")
    rng = np.random.default_rng(0)
    H, info = build_spanner_step(tree, 0, [()], 1, 0.05, 8, 64, rng)
    assert len(H) == 1
    assert {(0,), (1,)} <= set(info.candidates)
    idx = [info.candidates.index(h) for h in H]
    assert verify_spanner(info.bundle.U, idx, 2.0, 0.05).passed


def test_spanner_step_two_states():
    tree = LazyPdfTree(random_hmm(2, 2, 5, 7), mode="exact-base")
    rng = np.random.default_rng(1)
    H, info = build_spanner_step(tree, 1, [(0,), (1,)], 2, 0.05, 16, 64, rng)
    assert len(H) <= 2
    idx = [info.candidates.index(h) for h in H]
    assert verify_spanner(info.bundle.U, idx, 2.0, max(info.residual_bound, 1e-8)).passed


def test_every_step_spans_its_candidates():
    tree = LazyPdfTree(random_hmm(2, 2, 5, 7), mode="exact-base")
    rep = learn(tree, 2, LearnParams(k=64, N=16))
    for st in rep.steps:
        idx = [st.candidates.index(h) for h in rep.levels[st.t].H]
        assert verify_spanner(st.bundle.U, idx, 2.0, max(st.residual_bound, 1e-8)).passed


def test_horizon_one():
    tree = LazyPdfTree(random_hmm(2, 3, 1, 0), mode="exact-base")
    rep = learn(tree, 2, LearnParams(k=32, N=4))
    assert len(rep.levels) == 2 and rep.levels[0].H == [()]
    assert rep.levels[1].P.shape == (1, 3)
    rep.validate(tree.floor)


def test_iid_singletons_and_sampler():
    hmm = iid_hmm([0.2, 0.5, 0.3], 4)
    tree = LazyPdfTree(hmm, mode="exact-base")
    rep = learn(tree, 1, LearnParams(k=64, N=8))
    assert all(len(lv.H) == 1 for lv in rep.levels)
    assert tv_exact(Sampler(rep).table(), hmm.joint_table(), 3, 4) <= 0.05


def test_reference_run_structure(ref_run):
    tree, rep = ref_run
    rep.validate(tree.floor)
    assert rep.budget["conditional_queries"] == 0
    assert rep.budget["visited_nodes"] > 0
    for lv in rep.levels[1:]:
        assert len(lv.w) == len(lv.X) == lv.U.shape[1]


def test_sampled_oracle_budget_is_counted():
    tree = LazyPdfTree(random_hmm(2, 2, 3, 1), samples_per_node=1000, seed=2)
    rep = learn(tree, 2, LearnParams(k=32, N=8))
    assert rep.budget["conditional_queries"] == 1000 * rep.budget["visited_nodes"]


def test_audit_iid_all_representable():
    tree = LazyPdfTree(iid_hmm([0.4, 0.6], 4), mode="exact-base")
    rep = learn(tree, 1, LearnParams(k=64, N=8))
    for a in audit_representation(rep, tree, 1e-30, 0.05, n_histories=20):
        assert a.failing_fraction == 0.0 and a.size_ok and a.w_ok


def test_audit_reference_run(ref_run):
    tree, rep = ref_run
    res = audit_representation(rep, tree, 1e-30, 0.05, n_histories=50, c_prime=1e-9,
                               representative_r=20, representative_trials=50)
    for a in res:
        assert a.size_ok and a.w_ok and np.isfinite(a.w_max)
        assert a.failing_fraction <= 0.1
        assert a.representative_gap is not None and np.isfinite(a.representative_gap)


def test_json_round_trip(ref_run, tmp_path):
    _, rep = ref_run
    rep.save(tmp_path / "rep.json")
    d = json.loads((tmp_path / "rep.json").read_text())
    assert d["version"] == FORMAT_VERSION
    assert "1-0" in d["levels"][2]["u"] and "" not in d["levels"][2]["u"]
    back = LearnedRepresentation.load(tmp_path / "rep.json")
    for a, b in zip(rep.levels, back.levels):
        assert a.H == b.H and a.B == b.B and a.X == b.X
        np.testing.assert_array_equal(a.U, b.U)
        np.testing.assert_array_equal(a.w, b.w)
        np.testing.assert_array_equal(a.P, b.P)
    np.testing.assert_array_equal(Sampler(back).table(), Sampler(rep).table())


def test_unknown_version_rejected(ref_run):
    d = ref_run[1].to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        LearnedRepresentation.from_dict(d)


def test_rank_bound_must_be_positive():
    with pytest.raises(ValueError):
        learn(LazyPdfTree(iid_hmm([0.5, 0.5], 2)), 0)
