"""Ranking evaluation (AUC, NDCG@R) and neighbourhood/popularity baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import FeedbackMatrix
from .recommend import top_n


def auc_counts(scores, positives, negatives) -> tuple[int, int, int]:
    """``(wins, ties, pairs)`` over all (positive, negative) item pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[np.asarray(positives, dtype=np.int64)]
    neg = np.sort(scores[np.asarray(negatives, dtype=np.int64)])
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    wins = int(below.sum())
    ties = int((upto - below).sum())
    return wins, ties, len(pos) * len(neg)


def auc(scores, positives, negatives) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count one half."""
    wins, ties, pairs = auc_counts(scores, positives, negatives)
    if pairs == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    return (2 * wins + ties) / (2 * pairs)


def ndcg_at_r(ranking: Sequence[int], relevant: Iterable[int], R: int) -> float:
    """Binary-gain NDCG truncated at rank ``R``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    rel = set(int(i) for i in relevant)
    if not rel:
        raise ValueError("NDCG needs a non-empty relevant set")
    dcg = 0.0
    for r, item in enumerate(ranking[:R], start=1):
        if int(item) in rel:
            dcg += 1.0 / math.log2(r + 1)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(R, len(rel)) + 1))
    return dcg / idcg


def popularity_baseline(train: FeedbackMatrix) -> np.ndarray:
    """Training consumption count per item, identical for every user."""
    return train.item_counts().astype(np.float64)


def _cosine_neighbours(X, target: int, k: int, allowed: np.ndarray | None = None):
    row = X[target]
    n_u = row.nnz
    if n_u == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    inter = np.asarray((X @ row.T).todense()).ravel()
    lens = np.diff(X.indptr)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(lens > 0, inter / np.sqrt(float(n_u) * lens), 0.0)
    sim[target] = 0.0
    if allowed is not None:
        sim[~allowed] = 0.0
    cand = np.flatnonzero(sim > 0)
    order = cand[np.lexsort((cand, -sim[cand]))][:k]
    return order, sim[order]


def user_knn_baseline(train: FeedbackMatrix, k: int, target: int,
                      allowed: np.ndarray | None = None) -> np.ndarray:
    """Cosine user-kNN scores: ``sum_v sim(target, v) * I(i | v)`` over the top-k neighbours.

    ``allowed`` optionally restricts the neighbour pool (boolean per user).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X = train.to_csr()
    nbrs, sims = _cosine_neighbours(X, target, k, allowed)
    if len(nbrs) == 0:
        return np.zeros(train.num_items)
    return np.asarray(X[nbrs].T @ sims).ravel()


def intersection_knn_baseline(train: FeedbackMatrix, k: int, target: int,
                              tastes: Sequence[Iterable[int]]) -> np.ndarray:
    """User-kNN whose neighbours must share every taste the target shows.

    A user "shows" a taste when their row touches the taste's item set. This
    is the intersection-of-groups comparator: with disjoint groups it has no
    neighbours at all.
    """
    sets = [np.fromiter(t, dtype=np.int64) for t in tastes]
    touches = np.zeros((train.num_users, len(sets)), dtype=bool)
    for u in range(train.num_users):
        row = train.row(u)
        for j, s in enumerate(sets):
            touches[u, j] = np.isin(row, s).any()
    mine = touches[target]
    allowed = touches[:, mine].all(axis=1) if mine.any() else np.ones(train.num_users, bool)
    return user_knn_baseline(train, k, target, allowed)


@dataclass(frozen=True)
class EvalProtocol:
    """Train and test views over one shared user and item index."""

    train: FeedbackMatrix
    test: FeedbackMatrix
    cutoffs: tuple[int, ...] = (5, 10, 20)

    def __post_init__(self):
        if self.train.item_keys != self.test.item_keys:
            raise ValueError("train and test must share the item index")
        if self.train.user_keys != self.test.user_keys:
            raise ValueError("train and test must share the user index")
        if not self.cutoffs or min(self.cutoffs) < 1:
            raise ValueError("cutoffs must be positive")


@dataclass
class EvalReport:
    auc: float
    ndcg: dict[int, float]
    users: np.ndarray
    per_user_auc: np.ndarray
    per_user_ndcg: dict[int, np.ndarray]
    skipped_no_positives: int = 0
    skipped_no_negatives: int = 0

    @property
    def num_evaluated(self) -> int:
        return len(self.users)


class EvaluationError(ValueError):
    pass


def evaluate(scorer: Callable[[int], np.ndarray], protocol: EvalProtocol) -> EvalReport:
    """Per-user AUC and NDCG@R, averaged over evaluable users in user order.

    Positives are a user's test items not already consumed in train. Negatives
    are items in neither row. Train items are excluded from the ranking.
    """
    train, test = protocol.train, protocol.test
    n_items = train.num_items
    rmax = max(protocol.cutoffs)
    users, aucs = [], []
    ndcgs: dict[int, list[float]] = {r: [] for r in protocol.cutoffs}
    no_pos = no_neg = 0
    for u in range(train.num_users):
        seen = train.row(u)
        pos = np.setdiff1d(test.row(u), seen, assume_unique=True)
        if len(pos) == 0:
            no_pos += 1
            continue
        mask = np.ones(n_items, dtype=bool)
        mask[seen] = False
        mask[test.row(u)] = False
        neg = np.flatnonzero(mask)
        if len(neg) == 0:
            no_neg += 1
            continue
        s = np.asarray(scorer(u), dtype=np.float64)
        users.append(u)
        aucs.append(auc(s, pos, neg))
        ranking = top_n(s, seen, rmax).ranking
        for r in protocol.cutoffs:
            ndcgs[r].append(ndcg_at_r(ranking, pos, r))
    if not users:
        raise EvaluationError("no evaluable users (every user lacks test positives or negatives)")
    per_ndcg = {r: np.array(v) for r, v in ndcgs.items()}
    return EvalReport(float(np.mean(aucs)), {r: float(np.mean(v)) for r, v in per_ndcg.items()},
                      np.array(users), np.array(aucs), per_ndcg, no_pos, no_neg)


def write_report(reports: Mapping[str, EvalReport], stream: IO[str]) -> None:
    """Readable summary followed by a ``recommender,metric,cutoff,value`` block."""
    out = ["# evaluation report"]
    for name, rep in reports.items():
        out.append(f"[recommender {name}]")
        out.append(f"users_evaluated = {rep.num_evaluated}")
        out.append(f"skipped_no_positives = {rep.skipped_no_positives}")
        out.append(f"skipped_no_negatives = {rep.skipped_no_negatives}")
        out.append(f"auc = {rep.auc:.9g}")
        for r, v in rep.ndcg.items():
            out.append(f"ndcg@{r} = {v:.9g}")
    out.append("[data]")
    stream.write("\n".join(out) + "\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["recommender", "metric", "cutoff", "value"])
    for name, rep in reports.items():
        w.writerow([name, "auc", "", format(rep.auc, ".9g")])
        for r, v in rep.ndcg.items():
            w.writerow([name, "ndcg", r, format(v, ".9g")])
