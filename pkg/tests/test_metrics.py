import io
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import auc_quadratic, ndcg_quadratic
from tastegroup.data import FeedbackMatrix
from tastegroup.metrics import (EvalProtocol, EvaluationError, auc, auc_counts, evaluate,
                                intersection_knn_baseline, ndcg_at_r, popularity_baseline,
                                user_knn_baseline, write_report)
from tastegroup.recommend import top_n


class TestAUC:
    def test_perfect(self):
        assert auc([0.9, 0.8, 0.1, 0.0], [0, 1], [2, 3]) == 1.0

    def test_all_ties(self):
        assert auc([0.3] * 6, [0, 1], [2, 3, 4, 5]) == 0.5

    def test_one_win_one_loss(self):
        assert auc([0.9, 0.95, 0.1], [0], [1, 2]) == 0.5

    def test_needs_pairs(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [], [0, 1])

    def test_random_scores_near_half(self, rng):
        s = rng.random(10000)
        assert abs(auc(s, np.arange(5000), np.arange(5000, 10000)) - 0.5) <= 0.02

    def test_matches_quadratic(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 30))
            s = rng.integers(0, 5, n) / 4.0
            perm = rng.permutation(n)
            k = int(rng.integers(1, n))
            pos, neg = perm[:k], perm[k:]
            w, t, pairs = auc_counts(s, pos, neg)
            assert Fraction(2 * w + t, 2 * pairs) == auc_quadratic(s, pos, neg)


class TestNDCG:
    def test_rank_one(self):
        assert ndcg_at_r([3, 1, 2], {3}, 5) == 1.0

    def test_rank_two(self):
        assert ndcg_at_r([1, 3, 2], {3}, 5) == pytest.approx(1 / math.log2(3), abs=1e-12)
        assert ndcg_at_r([1, 3, 2], {3}, 5) == pytest.approx(0.630930, abs=1e-6)

    def test_outside_cutoff(self):
        assert ndcg_at_r([0, 1, 2, 3], {3}, 2) == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            ndcg_at_r([0], set(), 5)
        with pytest.raises(ValueError):
            ndcg_at_r([0], {0}, 0)

    def test_matches_quadratic(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 25))
            s = rng.integers(0, 6, n) / 5.0
            excl = set(rng.choice(n, int(rng.integers(0, n // 2 + 1)), replace=False).tolist())
            cand = [i for i in range(n) if i not in excl]
            rel = set(rng.choice(cand, int(rng.integers(1, len(cand) + 1)), replace=False).tolist())
            R = int(rng.integers(1, 12))
            got = ndcg_at_r(top_n(s, excl).ranking, rel, R)
            assert got == pytest.approx(ndcg_quadratic(s, excl, rel, R), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_monotone_transform_invariance_and_bounds(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 20))
    s = rng.integers(0, 4, n).astype(float)
    pos = rng.choice(n, int(rng.integers(1, n)), replace=False)
    neg = np.setdiff1d(np.arange(n), pos)
    t = np.exp(3 * s) - 7.0
    assert auc(s, pos, neg) == auc(t, pos, neg)
    R = int(rng.integers(1, n + 1))
    a = ndcg_at_r(top_n(s).ranking, pos, R)
    assert a == ndcg_at_r(top_n(t).ranking, pos, R)
    assert 0.0 <= a <= 1.0 + 1e-15
    top = set(top_n(s).ranking[:min(R, len(pos))].tolist())
    assert (abs(a - 1.0) < 1e-12) == top.issubset(set(pos.tolist()))


def matrix(dense, users=None):
    dense = np.asarray(dense)
    return FeedbackMatrix.from_dense(dense, user_keys=users,
                                     item_keys=[f"i{j}" for j in range(dense.shape[1])])


class TestBaselines:
    def test_popularity(self):
        dense = np.zeros((10, 3))
        dense[:5, 0] = 1
        dense[:2, 2] = 1
        s = popularity_baseline(matrix(dense))
        assert s.tolist() == [5, 0, 2]
        assert top_n(s).ranking.tolist() == [0, 2, 1]

    def test_identical_users(self):
        X = matrix([[1, 0, 1], [1, 0, 1]])
        np.testing.assert_allclose(user_knn_baseline(X, 1, 0), [1, 0, 1], atol=1e-15)

    def test_orthogonal(self):
        assert np.all(user_knn_baseline(matrix([[1, 0], [0, 1]]), 3, 0) == 0)

    def test_cosine_example(self):
        # u={a,b}, v={a,b,c}, w={c,d}
        X = matrix([[1, 1, 0, 0], [1, 1, 1, 0], [0, 0, 1, 1]])
        s = user_knn_baseline(X, 2, 0)
        assert s[2] == pytest.approx(2 / math.sqrt(6), abs=1e-12)
        assert s[2] == pytest.approx(0.816497, abs=1e-6)
        assert s[3] == 0.0

    def test_empty_user(self):
        assert np.all(user_knn_baseline(matrix([[0, 0], [1, 1]]), 1, 0) == 0)

    def test_neighbour_ties_by_index(self):
        X = matrix([[1, 0, 0], [1, 1, 0], [1, 0, 1]])
        s = user_knn_baseline(X, 1, 0)
        assert s[1] > 0 and s[2] == 0

    def test_bad_k(self):
        with pytest.raises(ValueError):
            user_knn_baseline(matrix([[1]]), 0, 0)

    def test_intersection_needs_all_tastes(self):
        # target shows tastes {0,1} and {2,3}; user 1 only the first, user 2 both
        X = matrix([[1, 0, 1, 0, 0], [1, 1, 0, 0, 1], [1, 0, 0, 1, 0]])
        tastes = [[0, 1], [2, 3]]
        s = intersection_knn_baseline(X, 5, 0, tastes)
        assert s[4] == 0.0 and s[3] > 0


class TestEvaluate:
    def _protocol(self):
        train = matrix([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0]], ["a", "b", "c"])
        test = matrix([[0, 1, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0]], ["a", "b", "c"])
        return EvalProtocol(train, test, (1, 2))

    def test_perfect(self):
        p = self._protocol()
        rep = evaluate(lambda u: p.test.to_dense()[u].astype(float), p)
        assert rep.auc == 1.0 and all(v == 1.0 for v in rep.ndcg.values())
        # user b's test item is a train item: no positives, skipped with user c
        assert rep.users.tolist() == [0] and rep.skipped_no_positives == 2

    def test_no_evaluable(self):
        p = self._protocol()
        q = EvalProtocol(p.train, matrix(np.zeros((3, 4)), ["a", "b", "c"]))
        with pytest.raises(EvaluationError):
            evaluate(lambda u: np.zeros(4), q)

    def test_mismatched_index(self):
        p = self._protocol()
        with pytest.raises(ValueError):
            EvalProtocol(p.train, matrix(np.zeros((3, 5)), ["a", "b", "c"]))

    def test_per_user_mean(self, rng):
        dense = rng.random((15, 12)) < 0.3
        tdense = (rng.random((15, 12)) < 0.3) & ~dense
        p = EvalProtocol(matrix(dense), matrix(tdense))
        S = rng.random((15, 12))
        rep = evaluate(lambda u: S[u], p)
        expect = []
        for u in range(15):
            pos = np.flatnonzero(tdense[u])
            neg = np.flatnonzero(~dense[u] & ~tdense[u])
            if len(pos) and len(neg):
                expect.append(float(auc_quadratic(S[u], pos, neg)))
        assert rep.auc == pytest.approx(np.mean(expect), abs=1e-12)

    def test_report_format(self):
        p = self._protocol()
        rep = evaluate(lambda u: p.test.to_dense()[u].astype(float), p)
        buf = io.StringIO()
        write_report({"tbf": rep}, buf)
        text = buf.getvalue()
        data = text.split("[data]\n")[1].splitlines()
        assert data[0] == "recommender,metric,cutoff,value"
        assert data[1:] == ["tbf,auc,,1", "tbf,ndcg,1,1", "tbf,ndcg,2,1"]
