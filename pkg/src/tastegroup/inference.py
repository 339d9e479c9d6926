"""Exact posterior inference on latent tree models."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Mapping

import numpy as np

from . import _kernels
from .data import FeedbackMatrix
from .ltm import InvalidModelError, LatentTreeModel, latents_at_level, validate

ABSENT_AS_S0 = "s0"
ABSENT_AS_MISSING = "missing"
_POLICIES = (ABSENT_AS_S0, ABSENT_AS_MISSING)


@dataclass(frozen=True)
class Evidence:
    """Observed leaf states. Leaves not in ``values`` follow ``absent``:
    ``"missing"`` leaves them unobserved, ``"s0"`` observes them as s0."""

    values: Mapping[int, int] = field(default_factory=dict)
    absent: str = ABSENT_AS_MISSING

    def __post_init__(self):
        if self.absent not in _POLICIES:
            raise ValueError(f"unknown absent policy {self.absent!r}")


def _checked(model: LatentTreeModel) -> LatentTreeModel:
    bad = validate(model)
    if bad:
        raise InvalidModelError(bad)
    return model


def evidence_row(model: LatentTreeModel, evidence: Evidence | Mapping[int, int]) -> np.ndarray:
    if not isinstance(evidence, Evidence):
        evidence = Evidence(evidence)
    row = np.full(model.num_nodes, -1, dtype=np.int8)
    if evidence.absent == ABSENT_AS_S0:
        row[model.observed] = 0
    for v, x in evidence.values.items():
        v = int(v)
        if not 0 <= v < model.num_nodes:
            raise KeyError(f"evidence names unknown node {v}")
        if not model.observed[v]:
            raise ValueError(f"evidence on latent node {v} ({model.labels[v]!r})")
        if x not in (0, 1):
            raise ValueError(f"evidence state must be 0 or 1, got {x!r}")
        row[v] = x
    return row


def run(model: LatentTreeModel, rows: np.ndarray):
    """Kernel call on pre-built evidence rows ``(U, n)``; no validation."""
    rows = np.ascontiguousarray(rows, dtype=np.int8)
    return _kernels.tree_pass(model.postorder, model.parent, np.ascontiguousarray(model.cpts),
                              np.ascontiguousarray(model.root_marginal), rows)


def posteriors(model: LatentTreeModel, evidence: Evidence | Mapping[int, int]) -> dict[int, float]:
    """P(Z = s1 | evidence) for every latent node Z."""
    _checked(model)
    _, belief, _ = run(model, evidence_row(model, evidence)[None, :])
    return {int(v): float(belief[0, v, 1]) for v in model.latent_ids}


def log_likelihood(model: LatentTreeModel, evidence: Evidence | Mapping[int, int]) -> float:
    _checked(model)
    ll, _, _ = run(model, evidence_row(model, evidence)[None, :])
    return float(ll[0])


@dataclass(frozen=True)
class Memberships:
    """Per-user membership vectors for the K groups at one level."""

    level: int
    group_ids: np.ndarray
    user_keys: tuple[str, ...]
    values: np.ndarray  # (U, K)
    unmatched_model_leaves: int = 0
    unmatched_matrix_items: int = 0

    def write(self, stream: IO[str], delimiter: str = ",", labels=None) -> None:
        w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
        names = [labels[g] if labels else f"Z{g}" for g in self.group_ids]
        w.writerow(["user", *names])
        for key, vec in zip(self.user_keys, self.values):
            w.writerow([key, *(format(float(x), ".9g") for x in vec)])


def matrix_evidence(model: LatentTreeModel, matrix: FeedbackMatrix,
                    policy: str = ABSENT_AS_S0, users=None) -> tuple[np.ndarray, int, int]:
    """Evidence rows for matrix users against ``model``'s leaves.

    Returns ``(rows, unmatched_model_leaves, unmatched_matrix_items)``.
    """
    if policy not in _POLICIES:
        raise ValueError(f"unknown absent policy {policy!r}")
    col_to_node = np.full(matrix.num_items, -1, dtype=np.int64)
    lab = model.label_index
    for i, key in enumerate(matrix.item_keys):
        col_to_node[i] = lab.get(key, -1)
    shared = int((col_to_node >= 0).sum())
    if shared == 0:
        raise ValueError("model and matrix share no items")
    users = np.arange(matrix.num_users) if users is None else np.asarray(users, dtype=np.int64)
    rows = np.full((len(users), model.num_nodes), -1, dtype=np.int8)
    if policy == ABSENT_AS_S0:
        rows[:, col_to_node[col_to_node >= 0]] = 0
    for r, u in enumerate(users):
        nodes = col_to_node[matrix.row(u)]
        rows[r, nodes[nodes >= 0]] = 1
    return rows, len(model.leaf_ids) - shared, matrix.num_items - shared


def batch_posteriors(model: LatentTreeModel, matrix: FeedbackMatrix, level: int,
                     policy: str = ABSENT_AS_S0, chunk: int = 4096) -> Memberships:
    """Membership vectors for every matrix user, ordered by ``latents_at_level``."""
    _checked(model)
    groups = latents_at_level(model, level)
    rows, miss_m, miss_x = matrix_evidence(model, matrix, policy)
    values = np.empty((matrix.num_users, len(groups)))
    for start in range(0, len(rows), chunk):
        block = rows[start:start + chunk]
        uniq, inverse = np.unique(block, axis=0, return_inverse=True)
        _, belief, _ = run(model, uniq)
        values[start:start + chunk] = belief[:, groups, 1][inverse.ravel()]
    return Memberships(level, groups, matrix.user_keys, values, miss_m, miss_x)
