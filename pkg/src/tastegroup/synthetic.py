"""Implicit-feedback data with planted taste groups."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO

import numpy as np

from .data import InteractionRecord
from .ltm import LatentTreeModel, latents_at_level


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 1000
    num_items: int = 80
    num_tastes: int = 8
    items_per_taste: int = 10
    taste_prob: float = 0.3
    consume_prob_in: float = 1.0
    consume_prob_out: float = 0.0
    rng_seed: int = 42

    def __post_init__(self):
        for name in ("taste_prob", "consume_prob_in", "consume_prob_out"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if min(self.num_users, self.num_items, self.num_tastes, self.items_per_taste) < 0:
            raise ValueError("counts must be non-negative")
        if self.num_tastes * self.items_per_taste > self.num_items:
            raise ValueError("num_tastes * items_per_taste exceeds num_items")


@dataclass(frozen=True)
class GroundTruth:
    user_keys: tuple[str, ...]
    item_keys: tuple[str, ...]
    user_tastes: np.ndarray  # bool (U, T)
    item_taste: np.ndarray  # int (I,), -1 outside every taste block

    def consume_prob(self, config: SynthConfig) -> np.ndarray:
        """The generating probability of every (user, item) pair."""
        in_taste = np.zeros((len(self.user_keys), len(self.item_keys)), dtype=bool)
        planted = self.item_taste >= 0
        in_taste[:, planted] = self.user_tastes[:, self.item_taste[planted]]
        return np.where(in_taste, config.consume_prob_in, config.consume_prob_out)

    def write(self, stream: IO[str]) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["kind", "key", "value"])
        for key, bits in zip(self.user_keys, self.user_tastes):
            w.writerow(["user", key, "".join("1" if b else "0" for b in bits)])
        for key, t in zip(self.item_keys, self.item_taste):
            w.writerow(["item", key, int(t)])

    @classmethod
    def read(cls, stream: IO[str]) -> "GroundTruth":
        users, bits, items, tastes = [], [], [], []
        for row in csv.DictReader(stream):
            if row["kind"] == "user":
                users.append(row["key"])
                bits.append([c == "1" for c in row["value"]])
            elif row["kind"] == "item":
                items.append(row["key"])
                tastes.append(int(row["value"]))
            else:
                raise ValueError(f"unknown truth row kind {row['kind']!r}")
        width = len(bits[0]) if bits else 0
        return cls(tuple(users), tuple(items), np.array(bits, dtype=bool).reshape(len(users), width),
                   np.array(tastes, dtype=np.int64))


def _keys(prefix: str, n: int) -> tuple[str, ...]:
    width = len(str(max(n - 1, 0)))
    return tuple(f"{prefix}{j:0{width}d}" for j in range(n))


def generate(config: SynthConfig) -> tuple[list[InteractionRecord], GroundTruth]:
    """Draw tastes and consumptions; events are emitted in a seeded random
    interleaving and timestamped 0, 1, 2, ... in emission order."""
    rng = np.random.default_rng(config.rng_seed)
    n_u, n_i, n_t = config.num_users, config.num_items, config.num_tastes
    item_taste = np.full(n_i, -1, dtype=np.int64)
    item_taste[: n_t * config.items_per_taste] = np.repeat(np.arange(n_t), config.items_per_taste)
    user_tastes = rng.random((n_u, n_t)) < config.taste_prob
    truth = GroundTruth(_keys("u", n_u), _keys("i", n_i), user_tastes, item_taste)
    consumed = rng.random((n_u, n_i)) < truth.consume_prob(config)
    us, its = np.nonzero(consumed)
    perm = rng.permutation(len(us))
    records = [InteractionRecord(truth.user_keys[us[j]], truth.item_keys[its[j]], t)
               for t, j in enumerate(perm)]
    return records, truth


def group_recovery_score(model: LatentTreeModel, truth: GroundTruth, level: int = 1) -> float:
    """Purity of the learned groups against the planted taste blocks.

    Latents are matched one-to-one to tastes greedily by overlap of their
    observed descendants with the taste's item block (largest overlap first,
    ties to lower latent then lower taste id).
    """
    planted = truth.item_taste >= 0
    total = int(planted.sum())
    if total == 0:
        return 1.0
    taste_of = {k: int(t) for k, t in zip(truth.item_keys, truth.item_taste)}
    groups = latents_at_level(model, level)
    n_t = int(truth.item_taste.max()) + 1
    overlap = np.zeros((len(groups), n_t), dtype=np.int64)
    for g, z in enumerate(groups):
        for leaf in model.descendants_observed(int(z)):
            t = taste_of.get(model.labels[leaf], -1)
            if t >= 0:
                overlap[g, t] += 1
    pairs = sorted(((-overlap[g, t], g, t) for g in range(len(groups)) for t in range(n_t)))
    used_g, used_t, matched = set(), set(), 0
    for neg, g, t in pairs:
        if g in used_g or t in used_t or neg == 0:
            continue
        used_g.add(g)
        used_t.add(t)
        matched += -neg
    return matched / total


def oracle_scores(truth: GroundTruth, config: SynthConfig) -> np.ndarray:
    """Per (user, item) generating probabilities; the ideal scorer for this data."""
    return truth.consume_prob(config)
