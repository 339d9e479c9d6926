import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_posteriors, eq1_direct, score_direct
from tastegroup.data import FeedbackMatrix
from tastegroup.ltm import LatentTreeModel
from tastegroup.recommend import (GroupProfile, TasteGroupRecommender, cold_start_membership,
                                  group_preferences, score, top_n, user_membership,
                                  write_recommendations)


def groups_model(k=1, leaves_per=1, leaf=((0.9, 0.1), (0.2, 0.8))):
    """k level-1 latents over ``leaves_per`` leaves each, chained under the first."""
    n_leaf = k * leaves_per
    labels = [f"i{j}" for j in range(n_leaf)] + [f"Z{g}" for g in range(k)]
    parent = [n_leaf + j // leaves_per for j in range(n_leaf)] + [-1] + [n_leaf] * (k - 1)
    level = [0] * n_leaf + [2 if k > 1 else 1] + [1] * (k - 1)
    cpts = [leaf] * n_leaf + [np.eye(2)] + [[[0.6, 0.4], [0.3, 0.7]]] * (k - 1)
    return LatentTreeModel.build(labels, [True] * n_leaf + [False] * k, parent, level,
                                 [0.5, 0.5], np.array(cpts, dtype=float))


def history(dense):
    dense = np.asarray(dense)
    return FeedbackMatrix.from_dense(dense, item_keys=[f"i{j}" for j in range(dense.shape[1])])


class TestGroupPreferences:
    def test_two_users(self):
        prof = group_preferences(groups_model(), history([[1], [0]]), np.array([[1.0], [0.5]]), 1)
        assert prof.preferences[0, 0] == pytest.approx(1.0 / 1.5, abs=1e-15)
        assert prof.membership_mass[0] == 1.5

    def test_unconsumed_is_zero(self):
        prof = group_preferences(groups_model(), history([[0], [0]]), np.array([[0.3], [0.9]]), 1)
        assert prof.preferences[0, 0] == 0.0

    def test_all_consumed_is_one(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 30))
            M = rng.random((n, 1))
            prof = group_preferences(groups_model(), history(np.ones((n, 1))), M, 1)
            assert prof.preferences[0, 0] == 1.0

    def test_degenerate_group(self):
        prof = group_preferences(groups_model(), history([[1], [1]]), np.zeros((2, 1)), 1)
        assert prof.degenerate.tolist() == [True]
        assert np.all(prof.preferences == 0)
        buf = io.StringIO()
        prof.write(buf)
        assert buf.getvalue().splitlines()[1] == "#mass,0"

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            group_preferences(groups_model(), history([[1]]), np.ones((1, 2)), 1)

    def test_matches_direct(self, rng):
        for _ in range(50):
            nu, ni = rng.integers(1, 11, 2)
            X = rng.random((nu, ni)) < 0.4
            M = rng.random((nu, 2)) * (rng.random((nu, 2)) < 0.8)
            model = groups_model(3)  # two level-1 groups under a root
            prof = group_preferences(model, FeedbackMatrix.from_dense(X), M, 1)
            np.testing.assert_allclose(prof.preferences, eq1_direct(X, M), rtol=0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_bounds_zero_rule_monotone(self, seed):
        rng = np.random.default_rng(seed)
        nu, ni = rng.integers(1, 11, 2)
        X = rng.random((nu, ni)) < 0.3
        M = rng.random((nu, 2)) * (rng.random((nu, 2)) < 0.7)
        prof = group_preferences(groups_model(3), FeedbackMatrix.from_dense(X), M, 1)
        P = prof.preferences
        assert np.all((P >= 0) & (P <= 1))
        support = (M.T @ X) > 0
        assert np.array_equal(P > 0, support)
        # adding consumption never lowers a preference
        u, i = rng.integers(0, nu), rng.integers(0, ni)
        X2 = X.copy()
        X2[u, i] = True
        P2 = group_preferences(groups_model(3), FeedbackMatrix.from_dense(X2), M, 1).preferences
        assert np.all(P2 >= P)
        mem = rng.random(2)
        s = score(prof, mem)
        assert np.all(s >= 0) and np.all(s <= mem.sum() + 1e-12)


class TestScore:
    prof = GroupProfile(1, np.array([0, 1]), np.array([[0.5], [0.25]]), np.ones(2))

    def test_single_group(self):
        assert score(self.prof, [1.0, 0.0])[0] == 0.5

    def test_mixture(self):
        assert score(self.prof, [0.6, 0.4])[0] == pytest.approx(0.40, abs=1e-15)

    def test_zero(self):
        assert score(self.prof, [0.0, 0.0])[0] == 0.0

    def test_mismatch(self):
        with pytest.raises(ValueError):
            score(self.prof, [1.0])

    def test_matches_direct(self, rng):
        for _ in range(50):
            k, n = rng.integers(1, 6), rng.integers(1, 11)
            P = rng.random((k, n))
            m = rng.random(k)
            prof = GroupProfile(1, np.arange(k), P, np.ones(k))
            np.testing.assert_allclose(score(prof, m), score_direct(P.tolist(), m.tolist()),
                                       rtol=0, atol=1e-12)


class TestMembership:
    def test_empty_is_prior(self):
        m = groups_model(2)
        _, ref = enumerate_posteriors(m, {})
        np.testing.assert_allclose(cold_start_membership(m, 1), [ref[3]], atol=1e-12)

    def test_deterministic_toy(self):
        m = groups_model(1, 2, leaf=((1.0, 0.0), (0.5, 0.5)))
        assert user_membership(m, {0: 1}, 1)[0] == 1.0

    def test_in_unit_interval(self, rng):
        m = groups_model(3, 2)
        for _ in range(20):
            ev = {v: int(rng.integers(0, 2)) for v in range(6) if rng.random() < 0.5}
            mem = user_membership(m, ev, 1)
            assert np.all((mem >= 0) & (mem <= 1))

    def test_bad_level(self):
        with pytest.raises(ValueError):
            user_membership(groups_model(2), {}, 5)


class TestTopN:
    s = np.array([0.4, 0.9, 0.4])

    def test_tie_by_index(self):
        assert top_n(self.s, (), 3).ranking.tolist() == [1, 0, 2]

    def test_exclusion(self):
        assert top_n(self.s, [1], 3).ranking.tolist() == [0, 2]

    def test_n1(self):
        assert top_n(self.s, (), 1).ranking.tolist() == [1]

    def test_short_pool(self):
        assert top_n(self.s, [0, 1], 10).ranking.tolist() == [2]

    def test_bad_n(self):
        with pytest.raises(ValueError):
            top_n(self.s, (), 0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=1, max_size=15),
           st.sets(st.integers(0, 14)))
    def test_permutation_of_candidates(self, scores, consumed):
        consumed = {c for c in consumed if c < len(scores)}
        r = top_n(scores, consumed).ranking.tolist()
        assert sorted(r) == sorted(set(range(len(scores))) - consumed)
        keys = [(-scores[i], i) for i in r]
        assert keys == sorted(keys)


def test_write_recommendations():
    buf = io.StringIO()
    ranked = top_n(np.array([0.1, 2 / 3]), (), 2)
    write_recommendations(buf, [("u1", ranked, ["a", "b"], "")])
    assert buf.getvalue().splitlines() == ["user,rank,item,score,flag",
                                           "u1,1,b,0.666666667,", "u1,2,a,0.1,"]


class TestRecommender:
    def test_end_to_end_against_parts(self, rng):
        model = groups_model(2, 2)
        X = history(rng.random((20, 4)) < 0.5)
        rec = TasteGroupRecommender(model, X, 1)
        u = 3
        ev = {v: int(X.contains(u, v)) for v in range(4)}
        mem = user_membership(model, ev, 1)
        np.testing.assert_allclose(rec.memberships.values[u], mem, atol=1e-12)
        np.testing.assert_allclose(rec.scores(u), score(rec.profile, mem), atol=1e-12)
        out = rec.recommend(u, 4).ranking
        assert not set(out) & set(X.row(u).tolist())
        np.testing.assert_allclose(rec.scores(None), score(rec.profile, rec.prior))

    def test_recency_history(self, rng):
        model = groups_model(2, 2)
        X = history(rng.random((20, 4)) < 0.5)
        H = history(np.zeros((20, 4)))
        rec = TasteGroupRecommender(model, X, 1, history=H)
        assert np.all(rec.scores(0) == 0)
        bad = FeedbackMatrix.from_dense(np.zeros((3, 4)), item_keys=[f"i{j}" for j in range(4)])
        with pytest.raises(ValueError):
            TasteGroupRecommender(model, X, 1, history=bad)
