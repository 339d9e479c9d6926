"""Taste-group profiles, user scores and top-N ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from . import _kernels
from .data import FeedbackMatrix
from .inference import (ABSENT_AS_MISSING, ABSENT_AS_S0, Evidence, batch_posteriors,
                        posteriors)
from .ltm import LatentTreeModel, latents_at_level


@dataclass(frozen=True)
class GroupProfile:
    """Group preferences for the K latents at one level.

    ``preferences[k, i]`` is the membership-weighted fraction of history users
    who consumed item ``i``; ``membership_mass[k]`` is the weight total.
    """

    level: int
    group_ids: np.ndarray
    preferences: np.ndarray  # (K, I)
    membership_mass: np.ndarray  # (K,)
    item_keys: tuple[str, ...] = ()

    @property
    def degenerate(self) -> np.ndarray:
        """Groups with zero membership mass; their preferences are all zero."""
        return self.membership_mass <= 0

    @property
    def num_groups(self) -> int:
        return len(self.group_ids)

    def write(self, stream: IO[str], labels: Sequence[str] | None = None,
              delimiter: str = ",") -> None:
        """Matrix file: one row per item, one column per group."""
        w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
        names = [labels[g] if labels else f"Z{g}" for g in self.group_ids]
        w.writerow(["item", *names])
        w.writerow(["#mass", *(format(float(x), ".9g") for x in self.membership_mass)])
        keys = self.item_keys or [str(i) for i in range(self.preferences.shape[1])]
        for i, key in enumerate(keys):
            w.writerow([key, *(format(float(x), ".9g") for x in self.preferences[:, i])])


def group_preferences(model: LatentTreeModel, history: FeedbackMatrix,
                      memberships: np.ndarray, level: int) -> GroupProfile:
    """Membership-weighted consumption rate of every item within every group.

    ``memberships`` is ``(history.num_users, K)`` with rows aligned to the
    history users and columns ordered as ``latents_at_level(model, level)``.
    """
    groups = latents_at_level(model, level)
    M = np.ascontiguousarray(memberships, dtype=np.float64)
    if M.shape != (history.num_users, len(groups)):
        raise ValueError(f"memberships shape {M.shape} does not match "
                         f"({history.num_users}, {len(groups)})")
    # sequential sum in user order, the same order the numerator accumulates in,
    # so an item consumed by every user gets exactly 1
    mass = np.cumsum(M, axis=0)[-1] if len(M) else np.zeros(len(groups))
    num = _kernels.accumulate_rows(history.indptr, history.indices, M, history.num_items)
    pref = np.zeros_like(num)
    ok = mass > 0
    pref[ok] = num[ok] / mass[ok, None]
    return GroupProfile(level, groups, pref, mass, history.item_keys)


def user_membership(model: LatentTreeModel, evidence: Evidence | dict, level: int) -> np.ndarray:
    """The K-vector of P(Z = s1 | user) for the level's latents."""
    groups = latents_at_level(model, level)
    post = posteriors(model, evidence)
    return np.array([post[int(g)] for g in groups])


def cold_start_membership(model: LatentTreeModel, level: int) -> np.ndarray:
    """Membership of a user with no observed history (prior marginals)."""
    return user_membership(model, Evidence({}, ABSENT_AS_MISSING), level)


def score(profile: GroupProfile, membership: np.ndarray) -> np.ndarray:
    """``sum_k preferences[k, i] * membership[k]`` for every item ``i``."""
    u = np.asarray(membership, dtype=np.float64)
    if u.ndim != 1 or len(u) != profile.num_groups:
        raise ValueError(f"membership has shape {u.shape}, profile has "
                         f"{profile.num_groups} groups")
    return u @ profile.preferences


@dataclass(frozen=True)
class RankedList:
    scores: np.ndarray
    ranking: np.ndarray
    excluded: np.ndarray


def top_n(scores: np.ndarray, consumed: Iterable[int] = (), n: int | None = None) -> RankedList:
    """Rank non-consumed items by descending score, ties to the lower index.

    ``n=None`` returns the full ranking.
    """
    if n is not None and n < 1:
        raise ValueError("n must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    excluded = np.unique(np.fromiter(consumed, dtype=np.int64))
    mask = np.ones(len(scores), dtype=bool)
    mask[excluded] = False
    cand = np.flatnonzero(mask)
    order = cand[np.lexsort((cand, -scores[cand]))]
    if n is not None:
        order = order[:n]
    return RankedList(scores, order, excluded)


def write_recommendations(stream: IO[str], rows, delimiter: str = ",") -> None:
    """``rows`` yields ``(user_key, ranked_list, item_keys, flag)`` tuples."""
    w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    w.writerow(["user", "rank", "item", "score", "flag"])
    for user_key, ranked, item_keys, flag in rows:
        for r, i in enumerate(ranked.ranking, start=1):
            w.writerow([user_key, r, item_keys[i], format(float(ranked.scores[i]), ".9g"), flag])


class TasteGroupRecommender:
    """Scores for the users of a training matrix from a learned model.

    Memberships come from each user's full training row; the group profile
    uses ``history`` (defaults to the training matrix itself), which must be
    built on the training user and item index.
    """

    def __init__(self, model: LatentTreeModel, train: FeedbackMatrix, level: int,
                 history: FeedbackMatrix | None = None, policy: str = ABSENT_AS_S0):
        history = train if history is None else history
        if history.user_keys != train.user_keys or history.item_keys != train.item_keys:
            raise ValueError("history must share the training user and item index")
        self.model = model
        self.train = train
        self.level = level
        self.memberships = batch_posteriors(model, train, level, policy)
        self.profile = group_preferences(model, history, self.memberships.values, level)
        self.prior = cold_start_membership(model, level)

    def membership(self, user: int | None) -> np.ndarray:
        return self.prior if user is None else self.memberships.values[user]

    def scores(self, user: int | None) -> np.ndarray:
        """Item scores for a training user index, or the cold-start prior for ``None``."""
        return score(self.profile, self.membership(user))

    def recommend(self, user: int | None, n: int) -> RankedList:
        seen = () if user is None else self.train.row(user)
        return top_n(self.scores(user), seen, n)
