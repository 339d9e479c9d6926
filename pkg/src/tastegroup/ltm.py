"""Latent tree models over binary variables.

A model is a rooted tree whose leaves are observed (item) variables and whose
internal nodes are binary latent variables. Parameters are a root marginal and
one 2x2 table per non-root node, ``cpts[v, a, x] = P(v = x | parent(v) = a)``.
State 0 is ``s0`` and state 1 is ``s1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

FORMAT_TAG = "tastegroup-ltm"
FORMAT_VERSION = 1
PROB_TOL = 1e-9

OBSERVED = "observed"
LATENT = "latent"


class ModelFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"model file line {line}: {message}")
        self.line = line


class InvalidModelError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(str(v) for v in self.violations[:5])
        super().__init__(f"invalid latent tree model: {msg}")


@dataclass(frozen=True)
class Violation:
    kind: str
    node: int | None
    message: str

    def __str__(self):
        where = "model" if self.node is None else f"node {self.node}"
        return f"[{self.kind}] {where}: {self.message}"


@dataclass(frozen=True, eq=False)
class LatentTreeModel:
    labels: tuple[str, ...]
    observed: np.ndarray  # bool (n,)
    parent: np.ndarray  # int64 (n,), -1 for root
    level: np.ndarray  # int64 (n,)
    root_marginal: np.ndarray  # (2,)
    cpts: np.ndarray  # (n, 2, 2); root entry unused

    def __post_init__(self):
        n = len(self.labels)
        for name, shape in (("observed", (n,)), ("parent", (n,)), ("level", (n,)),
                            ("root_marginal", (2,)), ("cpts", (n, 2, 2))):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)

    @classmethod
    def build(cls, labels, observed, parent, level, root_marginal, cpts) -> "LatentTreeModel":
        n = len(labels)
        cp = np.array(cpts, dtype=np.float64).reshape(n, 2, 2)
        return cls(tuple(labels), np.array(observed, dtype=bool),
                   np.array(parent, dtype=np.int64), np.array(level, dtype=np.int64),
                   np.array(root_marginal, dtype=np.float64), cp)

    def replace(self, **changes) -> "LatentTreeModel":
        fields = dict(labels=self.labels, observed=self.observed.copy(),
                      parent=self.parent.copy(), level=self.level.copy(),
                      root_marginal=self.root_marginal.copy(), cpts=self.cpts.copy())
        fields.update(changes)
        return LatentTreeModel.build(**fields)

    def __eq__(self, other):
        if not isinstance(other, LatentTreeModel):
            return NotImplemented
        return (self.labels == other.labels
                and np.array_equal(self.observed, other.observed)
                and np.array_equal(self.parent, other.parent)
                and np.array_equal(self.level, other.level)
                and np.array_equal(self.root_marginal, other.root_marginal)
                and np.array_equal(self._cmp_cpts(), other._cmp_cpts()))

    __hash__ = None

    def _cmp_cpts(self):
        c = self.cpts.copy()
        c[self.parent < 0] = 0.0
        return c

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    @property
    def max_level(self) -> int:
        return int(self.level.max()) if self.num_nodes else 0

    @cached_property
    def root(self) -> int:
        roots = np.flatnonzero(self.parent < 0)
        if len(roots) != 1:
            raise InvalidModelError([Violation("root", None, f"{len(roots)} roots")])
        return int(roots[0])

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        ch: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for v, p in enumerate(self.parent):
            if 0 <= p < self.num_nodes:
                ch[p].append(v)
        return tuple(tuple(c) for c in ch)

    @cached_property
    def postorder(self) -> np.ndarray:
        """Children before parents, root last; ties in ascending id."""
        order: list[int] = []
        stack = [(self.root, False)]
        while stack:
            v, done = stack.pop()
            if done:
                order.append(v)
                continue
            stack.append((v, True))
            for c in reversed(self.children[v]):
                stack.append((c, False))
        if len(order) != self.num_nodes:
            raise InvalidModelError([Violation("reachability", None,
                                               "not every node is reachable from the root")])
        out = np.array(order, dtype=np.int64)
        out.setflags(write=False)
        return out

    @cached_property
    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.observed)

    @cached_property
    def latent_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.observed)

    @cached_property
    def label_index(self) -> dict[str, int]:
        return {self.labels[v]: int(v) for v in self.leaf_ids}

    def descendants_observed(self, v: int) -> list[int]:
        out, stack = [], [v]
        while stack:
            x = stack.pop()
            if self.observed[x]:
                out.append(x)
            stack.extend(self.children[x])
        return sorted(out)


def validate(model: LatentTreeModel) -> list[Violation]:
    """Every violated structural or stochastic invariant; empty when the model is valid."""
    out: list[Violation] = []
    n = model.num_nodes
    if n == 0:
        return [Violation("empty", None, "model has no nodes")]
    parent = model.parent

    roots = np.flatnonzero(parent < 0)
    if len(roots) != 1:
        out.append(Violation("root", None, f"expected exactly one root, found {len(roots)}"))
    bad_parent = [v for v in range(n) if parent[v] >= n or parent[v] == v]
    for v in bad_parent:
        out.append(Violation("parent", v, f"invalid parent index {parent[v]}"))

    # cycle detection by walking up with a step bound
    on_cycle = set()
    for v in range(n):
        seen = set()
        x = v
        while 0 <= x < n and parent[x] >= 0 and x not in seen:
            seen.add(x)
            x = int(parent[x])
        if 0 <= x < n and x in seen:
            on_cycle.add(x)
    for v in sorted(on_cycle):
        out.append(Violation("cycle", v, "parent links form a cycle through this node"))

    if len(roots) == 1 and not on_cycle and not bad_parent:
        reach = np.zeros(n, dtype=bool)
        stack = [int(roots[0])]
        while stack:
            x = stack.pop()
            reach[x] = True
            stack.extend(model.children[x])
        for v in np.flatnonzero(~reach):
            out.append(Violation("reachability", int(v), "not reachable from the root"))

    has_child = np.zeros(n, dtype=bool)
    for p in parent:
        if 0 <= p < n:
            has_child[p] = True
    for v in range(n):
        if model.observed[v]:
            if has_child[v]:
                out.append(Violation("leaf", v, "observed node has children"))
            if model.level[v] != 0:
                out.append(Violation("level", v, f"observed node has level {model.level[v]}"))
        else:
            if not has_child[v]:
                out.append(Violation("leaf", v, "latent node has no children"))
            if model.level[v] < 1:
                out.append(Violation("level", v, f"latent node has level {model.level[v]}"))
        p = parent[v]
        if 0 <= p < n and not model.level[v] < model.level[p]:
            out.append(Violation("level", v,
                                 f"level {model.level[v]} not below parent level {model.level[p]}"))

    rm = model.root_marginal
    if not np.all(np.isfinite(rm)) or np.any(rm < 0) or np.any(rm > 1):
        out.append(Violation("range", None, f"root marginal entries outside [0,1]: {rm}"))
    if not abs(rm.sum() - 1.0) <= PROB_TOL:
        out.append(Violation("stochastic", None, f"root marginal sums to {rm.sum()!r}"))
    for v in range(n):
        if parent[v] < 0:
            continue
        t = model.cpts[v]
        if not np.all(np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
            out.append(Violation("range", v, "CPT entries outside [0,1]"))
        for a in range(2):
            s = t[a].sum()
            if not abs(s - 1.0) <= PROB_TOL:
                out.append(Violation("stochastic", v, f"CPT row for parent=s{a} sums to {s!r}"))
    return out


def check(model: LatentTreeModel) -> LatentTreeModel:
    bad = validate(model)
    if bad:
        raise InvalidModelError(bad)
    return model


def joint_log_prob(model: LatentTreeModel, assignment: Mapping[int, int] | Sequence[int]) -> float:
    """Log of the root marginal times every CPT factor; ``-inf`` on a zero factor."""
    n = model.num_nodes
    if isinstance(assignment, Mapping):
        missing = [v for v in range(n) if v not in assignment]
        if missing:
            raise KeyError(f"assignment lacks node(s) {missing}")
        x = [int(assignment[v]) for v in range(n)]
    else:
        x = [int(a) for a in assignment]
        if len(x) != n:
            raise KeyError(f"assignment covers {len(x)} of {n} nodes")
    total = 0.0
    for v in range(n):
        p = model.parent[v]
        f = model.root_marginal[x[v]] if p < 0 else model.cpts[v, x[p], x[v]]
        if f == 0.0:
            return -math.inf
        total += math.log(f)
    return total


def latents_at_level(model: LatentTreeModel, level: int) -> np.ndarray:
    """Latent ids at ``level`` in ascending order; these define the K groups."""
    top = model.max_level
    if not 1 <= level <= top:
        raise ValueError(f"level {level} out of range; valid levels are 1..{top}")
    return np.flatnonzero((~model.observed) & (model.level == level))


def marginals(model: LatentTreeModel) -> np.ndarray:
    """Prior marginal of every node, by forward propagation from the root."""
    out = np.zeros((model.num_nodes, 2))
    for v in model.postorder[::-1]:
        p = model.parent[v]
        out[v] = model.root_marginal if p < 0 else out[p] @ model.cpts[v]
    return out


# --- serialization ---------------------------------------------------------

def _f(x: float) -> str:
    return format(float(x), ".17g")


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _unquote(s: str, line: int) -> str:
    if len(s) < 2 or s[0] != '"' or s[-1] != '"':
        raise ModelFormatError(line, f"expected quoted string, got {s!r}")
    out, i, body = [], 0, s[1:-1]
    while i < len(body):
        c = body[i]
        if c == "\\":
            if i + 1 >= len(body):
                raise ModelFormatError(line, "dangling escape")
            nxt = body[i + 1]
            out.append({"n": "\n"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def serialize(model: LatentTreeModel) -> bytes:
    lines = [f"format = {FORMAT_TAG} {FORMAT_VERSION}",
             f"num_nodes = {model.num_nodes}",
             "root_marginal = " + " ".join(_f(x) for x in model.root_marginal)]
    for v in range(model.num_nodes):
        p = int(model.parent[v])
        lines.append(f"[node {v}]")
        lines.append(f"kind = {OBSERVED if model.observed[v] else LATENT}")
        lines.append(f"label = {_quote(model.labels[v])}")
        lines.append(f"parent = {'none' if p < 0 else p}")
        lines.append(f"level = {int(model.level[v])}")
        if p >= 0:
            lines.append("cpt = " + " ".join(_f(x) for x in model.cpts[v].ravel()))
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("utf-8")


def deserialize(data: bytes | str) -> LatentTreeModel:
    """Parse :func:`serialize` output. Structural validity is not checked here."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.split("\n")
    pos = 0

    def next_kv(expect: str):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ModelFormatError(pos + 1, f"unexpected end of input, expected {expect!r}")
        raw = lines[pos]
        pos += 1
        if expect.startswith("["):
            if raw.strip() != expect:
                raise ModelFormatError(pos, f"expected {expect!r}, got {raw!r}")
            return None
        if expect == "end":
            if raw.strip() != "end":
                raise ModelFormatError(pos, f"expected 'end', got {raw!r}")
            return None
        key, sep, val = raw.partition(" = ")
        if not sep or key.strip() != expect:
            raise ModelFormatError(pos, f"expected key {expect!r}, got {raw!r}")
        return val.strip()

    def floats(val: str, k: int) -> list[float]:
        parts = val.split()
        if len(parts) != k:
            raise ModelFormatError(pos, f"expected {k} numbers, got {len(parts)}")
        try:
            return [float(x) for x in parts]
        except ValueError:
            raise ModelFormatError(pos, f"bad number in {val!r}") from None

    def integer(val: str) -> int:
        try:
            return int(val)
        except ValueError:
            raise ModelFormatError(pos, f"expected integer, got {val!r}") from None

    tag = next_kv("format").split()
    if len(tag) != 2 or tag[0] != FORMAT_TAG:
        raise ModelFormatError(pos, f"unknown format tag {' '.join(tag)!r}")
    if integer(tag[1]) != FORMAT_VERSION:
        raise ModelFormatError(pos, f"unsupported format version {tag[1]}")
    n = integer(next_kv("num_nodes"))
    if n < 0:
        raise ModelFormatError(pos, "negative node count")
    rm = floats(next_kv("root_marginal"), 2)
    labels, observed, parent, level = [], [], [], []
    cpts = np.zeros((n, 2, 2))
    for v in range(n):
        next_kv(f"[node {v}]")
        kind = next_kv("kind")
        if kind not in (OBSERVED, LATENT):
            raise ModelFormatError(pos, f"unknown node kind {kind!r}")
        labels.append(_unquote(next_kv("label"), pos))
        p_raw = next_kv("parent")
        p = -1 if p_raw == "none" else integer(p_raw)
        if p_raw != "none" and not 0 <= p < n:
            raise ModelFormatError(pos, f"parent index {p} out of range")
        level.append(integer(next_kv("level")))
        if p >= 0:
            cpts[v] = np.array(floats(next_kv("cpt"), 4)).reshape(2, 2)
        observed.append(kind == OBSERVED)
        parent.append(p)
    next_kv("end")
    return LatentTreeModel.build(labels, observed, parent, level, rm, cpts)


# --- random models ---------------------------------------------------------

def random_model(rng: np.random.Generator, n_nodes: int, zero_prob: float = 0.0) -> LatentTreeModel:
    """A random valid model with ``n_nodes >= 2`` nodes.

    Latents form a random recursive tree; every childless latent gets at least
    one leaf. ``zero_prob`` makes individual CPT rows deterministic.
    """
    if n_nodes < 2:
        raise ValueError("need at least one latent and one leaf")
    n_lat = int(rng.integers(1, n_nodes // 2 + 1))
    n_obs = n_nodes - n_lat
    parent = [-1] + [int(rng.integers(0, j)) for j in range(1, n_lat)]
    has_child = [False] * n_lat
    for j in range(1, n_lat):
        has_child[parent[j]] = True
    need = [j for j in range(n_lat) if not has_child[j]]
    leaf_parent = need + [int(rng.integers(0, n_lat)) for _ in range(n_obs - len(need))]
    leaf_parent = [int(x) for x in rng.permutation(leaf_parent)]
    # leaves first (ids 0..n_obs-1), latents after
    full_parent = [n_obs + p for p in leaf_parent] + [(-1 if p < 0 else n_obs + p) for p in parent]
    observed = [True] * n_obs + [False] * n_lat
    level = [0] * n_nodes
    for j in range(n_lat - 1, -1, -1):  # children of latent j have larger indices
        v = n_obs + j
        kids = [c for c in range(n_nodes) if full_parent[c] == v]
        level[v] = 1 + max(level[c] for c in kids)

    def row():
        if rng.random() < zero_prob:
            x = int(rng.integers(0, 2))
            return [1.0 - x, float(x)]
        a = rng.random()
        return [1.0 - a, a]

    cpts = np.array([[row(), row()] for _ in range(n_nodes)])
    labels = [f"x{v}" for v in range(n_obs)] + [f"z{j}" for j in range(n_lat)]
    return LatentTreeModel.build(labels, observed, full_parent, level, row(), cpts)
