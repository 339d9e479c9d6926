import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_posteriors, forward_marginals
from tastegroup.data import FeedbackMatrix
from tastegroup.inference import (Evidence, batch_posteriors, evidence_row, log_likelihood,
                                  posteriors)
from tastegroup.ltm import InvalidModelError, LatentTreeModel, random_model

LEAF = [[0.8, 0.2], [0.2, 0.8]]


def two_leaf(p=0.5, leaf=LEAF):
    return LatentTreeModel.build(["X1", "X2", "Z"], [True, True, False], [2, 2, -1], [0, 0, 1],
                                 [1 - p, p], [leaf, leaf, np.eye(2)])


class TestExamples:
    def test_both_consumed(self):
        assert posteriors(two_leaf(), {0: 1, 1: 1})[2] == pytest.approx(0.32 / 0.34, abs=1e-12)
        assert posteriors(two_leaf(), {0: 1, 1: 1})[2] == pytest.approx(0.941176, abs=1e-6)

    def test_empty_is_prior(self):
        assert posteriors(two_leaf(), {})[2] == pytest.approx(0.5, abs=1e-15)

    def test_mixed_evidence(self):
        assert posteriors(two_leaf(), {0: 1, 1: 0})[2] == pytest.approx(0.5, abs=1e-12)

    def test_loglik(self):
        assert log_likelihood(two_leaf(), {0: 1, 1: 1}) == pytest.approx(math.log(0.34), abs=1e-12)
        assert log_likelihood(two_leaf(), {}) == pytest.approx(0.0, abs=1e-15)

    def test_impossible_evidence(self):
        m = two_leaf(p=1.0, leaf=np.eye(2))
        assert log_likelihood(m, {0: 0}) == -math.inf

    def test_s0_policy(self):
        m = two_leaf()
        a = posteriors(m, Evidence({0: 1}, "s0"))
        b = posteriors(m, {0: 1, 1: 0})
        assert a == b


class TestErrors:
    def test_latent_evidence(self):
        with pytest.raises(ValueError):
            posteriors(two_leaf(), {2: 1})

    def test_invalid_model(self):
        bad = two_leaf().replace(root_marginal=np.array([0.3, 0.3]))
        with pytest.raises(InvalidModelError):
            posteriors(bad, {})

    def test_bad_state(self):
        with pytest.raises(ValueError):
            evidence_row(two_leaf(), {0: 2})

    def test_bad_policy(self):
        with pytest.raises(ValueError):
            Evidence({}, "ignore")


def test_matches_enumeration(rng):
    for _ in range(60):
        m = random_model(rng, int(rng.integers(2, 12)), 0.1)
        ev = {int(v): int(rng.integers(0, 2)) for v in m.leaf_ids if rng.random() < 0.6}
        ref_ll, ref = enumerate_posteriors(m, ev)
        if ref_ll == -math.inf:
            assert log_likelihood(m, ev) == -math.inf
            continue
        assert log_likelihood(m, ev) == pytest.approx(ref_ll, abs=1e-9)
        post = posteriors(m, ev)
        assert set(post) == set(int(v) for v in m.latent_ids)
        for v, p in post.items():
            assert p == pytest.approx(ref[v], abs=1e-9)


def test_empty_evidence_equals_forward_marginals(rng):
    for _ in range(20):
        m = random_model(rng, int(rng.integers(2, 10)))
        ref = forward_marginals(m)
        for v, p in posteriors(m, {}).items():
            assert p == pytest.approx(ref[v], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.randoms(use_true_random=False))
def test_order_invariant_and_deterministic(seed, shuffler):
    rng = np.random.default_rng(seed)
    m = random_model(rng, int(rng.integers(2, 12)))
    items = [(int(v), int(rng.integers(0, 2))) for v in m.leaf_ids]
    shuffled = list(items)
    shuffler.shuffle(shuffled)
    a = log_likelihood(m, dict(items))
    b = log_likelihood(m, dict(shuffled))
    assert a == b or (math.isinf(a) and math.isinf(b))
    pa, pb = posteriors(m, dict(items)), posteriors(m, dict(shuffled))
    for v in pa:
        assert 0.0 <= pa[v] <= 1.0
        assert pa[v] == pb[v] or (math.isnan(pa[v]) and math.isnan(pb[v]))


def _two_group_model():
    c = np.array([[0.9, 0.1], [0.2, 0.8]])
    return LatentTreeModel.build(["a", "b", "c", "d", "A", "B", "R"], [True] * 4 + [False] * 3,
                                 [4, 4, 5, 5, 6, 6, -1], [0, 0, 0, 0, 1, 1, 2], [0.6, 0.4],
                                 [c, c, c, c, c, c, np.eye(2)])


class TestBatch:
    def test_empty_row_is_all_s0(self):
        m = _two_group_model()
        X = FeedbackMatrix.from_dense(np.array([[0, 0, 0, 0], [1, 1, 1, 1]]),
                                      item_keys=["a", "b", "c", "d"])
        mem = batch_posteriors(m, X, 1)
        _, ref0 = enumerate_posteriors(m, {0: 0, 1: 0, 2: 0, 3: 0})
        _, ref1 = enumerate_posteriors(m, {0: 1, 1: 1, 2: 1, 3: 1})
        np.testing.assert_allclose(mem.values[0], [ref0[4], ref0[5]], atol=1e-12)
        np.testing.assert_allclose(mem.values[1], [ref1[4], ref1[5]], atol=1e-12)
        assert np.all(mem.values[1] >= mem.values[0])
        assert list(mem.group_ids) == [4, 5]

    def test_matches_single_user_calls(self, rng):
        m = _two_group_model()
        dense = rng.random((30, 4)) < 0.5
        X = FeedbackMatrix.from_dense(dense, item_keys=["a", "b", "c", "d"])
        mem = batch_posteriors(m, X, 2)
        for u in range(30):
            ev = {v: int(dense[u, v]) for v in range(4)}
            assert mem.values[u, 0] == pytest.approx(posteriors(m, ev)[6], abs=1e-14)

    def test_partial_overlap_counted(self):
        m = _two_group_model()
        X = FeedbackMatrix.from_dense(np.array([[1, 0, 1]]), item_keys=["a", "zz", "c"])
        mem = batch_posteriors(m, X, 1)
        assert mem.unmatched_model_leaves == 2 and mem.unmatched_matrix_items == 1

    def test_disjoint_items(self):
        X = FeedbackMatrix.from_dense(np.array([[1]]), item_keys=["zz"])
        with pytest.raises(ValueError, match="share no items"):
            batch_posteriors(_two_group_model(), X, 1)

    def test_bad_level(self):
        X = FeedbackMatrix.from_dense(np.array([[1, 0, 0, 0]]), item_keys=["a", "b", "c", "d"])
        with pytest.raises(ValueError):
            batch_posteriors(_two_group_model(), X, 3)

    def test_write_format(self):
        X = FeedbackMatrix.from_dense(np.array([[1, 0, 0, 0]]), item_keys=["a", "b", "c", "d"],
                                      user_keys=["alice"])
        buf = io.StringIO()
        batch_posteriors(_two_group_model(), X, 1).write(buf)
        head, row = buf.getvalue().splitlines()
        assert head == "user,Z4,Z5"
        key, *vals = row.split(",")
        assert key == "alice" and len(vals) == 2
        assert all(len(v.replace("0.", "").lstrip("0")) <= 9 for v in vals)
