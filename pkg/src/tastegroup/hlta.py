"""Hierarchical latent tree learning over binary item data.

Level 1 groups items into islands by pairwise mutual information and fits one
binary latent class model per island. Each higher level repeats the procedure
on the hardened posteriors of the level below, until few enough latents
remain. The assembled tree is refined by a global EM pass and its latent
states are oriented so that s1 means "has the taste".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from . import _kernels
from .data import FeedbackMatrix
from .ltm import LatentTreeModel, check

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LearnConfig:
    max_island_size: int = 8
    em_max_iters: int = 100
    em_tol: float = 1e-4
    em_restarts: int = 3
    rng_seed: int = 0
    min_top_level_vars: int = 1
    # add-one smoothing of the 2x2 co-occurrence table
    mi_smoothing: float = 1.0
    # a candidate joins an island only if its mean MI (bits) to members exceeds
    # this; None derives it from a G-test of independence at island_alpha
    min_island_mi: float | None = None
    island_alpha: float = 0.01

    def __post_init__(self):
        if self.max_island_size < 2:
            raise ValueError("max_island_size must be >= 2")
        if self.em_max_iters < 0 or self.em_restarts < 1:
            raise ValueError("em_max_iters must be >= 0 and em_restarts >= 1")
        if not self.em_tol >= 0:
            raise ValueError("em_tol must be non-negative")
        if self.min_top_level_vars < 1:
            raise ValueError("min_top_level_vars must be >= 1")
        if self.mi_smoothing < 0:
            raise ValueError("mi_smoothing must be non-negative")
        if not 0.0 < self.island_alpha < 1.0:
            raise ValueError("island_alpha must lie in (0, 1)")

    def island_threshold(self, n_users: int) -> float:
        """Mean-MI bar (bits) for growing an island over ``n_users`` rows."""
        if self.min_island_mi is not None:
            return self.min_island_mi
        # 2 N ln2 MI is asymptotically chi-square(1) under independence
        return float(chi2.isf(self.island_alpha, 1)) / (2.0 * max(n_users, 1) * np.log(2.0))


def pairwise_mi(data, smoothing: float = 1.0) -> np.ndarray:
    """Symmetric matrix of pairwise mutual information in bits, zero diagonal.

    ``smoothing`` is added to each of the four joint cells before normalising.
    """
    X = np.asarray(data)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("pairwise_mi needs at least two variables")
    X = (X != 0).astype(np.int64)
    n = X.shape[0]
    n11 = (X.T @ X).astype(np.float64)
    c = np.diag(n11).copy()
    n10 = c[:, None] - n11
    n01 = c[None, :] - n11
    n00 = n - n11 - n10 - n01
    cells = np.stack([n00, n01, n10, n11]) + smoothing
    tot = n + 4.0 * smoothing
    if tot <= 0:
        raise ValueError("no data and no smoothing")
    pj = cells / tot
    pa1 = pj[2] + pj[3]
    pb1 = pj[1] + pj[3]
    pa = np.stack([1 - pa1, 1 - pa1, pa1, pa1])
    pb = np.stack([1 - pb1, pb1, 1 - pb1, pb1])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pj > 0, pj * np.log2(pj / (pa * pb)), 0.0)
    mi = terms.sum(axis=0)
    mi = np.triu(np.maximum(mi, 0.0), 1)
    return mi + mi.T


def positive_association(data, smoothing: float = 1.0) -> np.ndarray:
    """``True`` where two variables are positively associated (odds ratio > 1)."""
    X = (np.asarray(data) != 0).astype(np.int64)
    n = X.shape[0]
    n11 = (X.T @ X).astype(np.float64)
    c = np.diag(n11).copy()
    n10 = c[:, None] - n11
    n01 = c[None, :] - n11
    n00 = n - n11 - n10 - n01
    s = smoothing
    out = (n11 + s) * (n00 + s) > (n10 + s) * (n01 + s)
    np.fill_diagonal(out, False)
    return out


def build_islands(mi: np.ndarray, max_island_size: int, min_mi: float = 0.0) -> list[list[int]]:
    """Greedy agglomeration of variables into islands.

    Each island is seeded with the highest-MI unassigned pair and grown by the
    unassigned variable of highest mean MI to the members, until the size cap,
    exhaustion, or no candidate has mean MI above ``min_mi``. Ties go to the
    lowest variable id.
    """
    mi = np.asarray(mi, dtype=np.float64)
    remaining = list(range(mi.shape[0]))
    islands: list[list[int]] = []
    while remaining:
        if len(remaining) == 1:
            islands.append([remaining.pop()])
            break
        idx = np.array(remaining)
        sub = mi[np.ix_(idx, idx)]
        iu = np.triu_indices(len(idx), 1)
        best = int(np.argmax(sub[iu]))
        island = [int(idx[iu[0][best]]), int(idx[iu[1][best]])]
        remaining = [v for v in remaining if v not in island]
        while len(island) < max_island_size and remaining:
            cand = np.array(remaining)
            avg = mi[np.ix_(cand, island)].mean(axis=1)
            j = int(np.argmax(avg))
            if not avg[j] > min_mi:
                break
            island.append(int(cand[j]))
            remaining.pop(j)
        islands.append(island)
    return islands


# --- EM on a tree ----------------------------------------------------------

def _postorder(parent: np.ndarray) -> np.ndarray:
    n = len(parent)
    children = [[] for _ in range(n)]
    root = -1
    for v, p in enumerate(parent):
        if p < 0:
            root = v
        else:
            children[p].append(v)
    order, stack = [], [(root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            order.append(v)
        else:
            stack.append((v, True))
            stack.extend((c, False) for c in reversed(children[v]))
    return np.array(order, dtype=np.int64)


def compress_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique evidence rows and their multiplicities."""
    uniq, counts = np.unique(np.ascontiguousarray(rows, dtype=np.int8), axis=0,
                             return_counts=True)
    return uniq, counts.astype(np.float64)


def tree_em(parent, cpts, root_marginal, rows, weights, max_iters, tol, order=None):
    """EM for a binary tree model from (weighted) evidence rows.

    Iterations use the maximum-likelihood M-step, so the evidence
    log-likelihood is non-decreasing. Add-one smoothing of the expected counts
    is applied once, in a final M-step from the last E-step, which keeps the
    returned tables free of hard zeros.

    Returns ``(cpts, root_marginal, trace)`` where ``trace[t]`` is the
    log-likelihood after ``t`` maximum-likelihood M-steps.
    """
    parent = np.asarray(parent, dtype=np.int64)
    order = _postorder(parent) if order is None else order
    root = order[-1]
    cpts = np.array(cpts, dtype=np.float64)
    rm = np.array(root_marginal, dtype=np.float64)
    total_w = weights.sum()
    trace: list[float] = []
    for it in range(max_iters + 1):
        ll, belief, edge = _kernels.tree_pass(order, parent, cpts, rm, rows)
        trace.append(float(weights @ ll))
        rc = weights @ belief[:, root]
        ec = np.tensordot(weights, edge, axes=1)
        if it == max_iters or (it > 0 and trace[-1] - trace[-2] <= tol * abs(trace[-2])):
            break
        rm = rc / total_w
        mass = ec.sum(axis=2, keepdims=True)
        # a parent state with no posterior mass keeps its row
        cpts = np.where(mass > 0, ec / np.where(mass > 0, mass, 1.0), cpts)
    rm = (rc + 1.0) / (total_w + 2.0)
    cpts = (ec + 1.0) / (ec.sum(axis=2, keepdims=True) + 2.0)
    return cpts, rm, np.array(trace)


def tree_loglik(parent, cpts, root_marginal, rows, weights, order=None) -> float:
    parent = np.asarray(parent, dtype=np.int64)
    order = _postorder(parent) if order is None else order
    ll, _, _ = _kernels.tree_pass(order, parent, np.asarray(cpts, dtype=np.float64),
                                  np.asarray(root_marginal, dtype=np.float64), rows)
    return float(weights @ ll)


def _random_params(rng: np.random.Generator, n: int):
    rm = rng.uniform(0.2, 0.8, 2)
    cpts = rng.uniform(0.2, 0.8, (n, 2, 2))
    return cpts / cpts.sum(axis=2, keepdims=True), rm / rm.sum()


@dataclass
class LCMFit:
    """A binary latent class model: one latent parent over the island's variables."""

    root_marginal: np.ndarray
    cpts: np.ndarray  # (m, 2, 2), P(child | latent)
    loglik: float
    n_iter: int
    traces: list[np.ndarray] = field(default_factory=list)

    def posterior(self, data) -> np.ndarray:
        """P(latent = s1 | row) for each row of ``data``."""
        data = np.asarray(data, dtype=np.int8)
        m = data.shape[1]
        rows = np.full((len(data), m + 1), -1, dtype=np.int8)
        rows[:, :m] = data != 0
        uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
        parent = np.array([m] * m + [-1])
        cp = np.zeros((m + 1, 2, 2))
        cp[:m] = self.cpts
        _, belief, _ = _kernels.tree_pass(_postorder(parent), parent, cp,
                                          self.root_marginal, uniq)
        return belief[:, m, 1][inverse.ravel()]


def fit_lcm(data, config: LearnConfig, rng: np.random.Generator | None = None) -> LCMFit:
    """Fit a latent class model to binary ``data`` (users x island variables).

    A single-variable island is solved in closed form: the latent copies the
    variable and the log-likelihood is ``-N`` times its empirical entropy.
    """
    X = (np.asarray(data) != 0).astype(np.int8)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("fit_lcm needs a non-empty users x variables matrix")
    n, m = X.shape
    if m == 1:
        p = X[:, 0].mean()
        ll = sum(c * np.log(c / n) for c in (n * (1 - p), n * p) if c > 0)
        return LCMFit(np.array([1 - p, p]), np.eye(2)[None], float(ll), 0)

    rng = rng or np.random.default_rng(config.rng_seed)
    rows = np.full((n, m + 1), -1, dtype=np.int8)
    rows[:, :m] = X
    rows, weights = compress_rows(rows)
    parent = np.array([m] * m + [-1], dtype=np.int64)
    order = _postorder(parent)

    best = None
    traces = []
    for _ in range(config.em_restarts):
        cp0, rm0 = _random_params(rng, m + 1)
        cp, rm, trace = tree_em(parent, cp0, rm0, rows, weights,
                                config.em_max_iters, config.em_tol, order)
        traces.append(trace)
        ll = tree_loglik(parent, cp, rm, rows, weights, order)
        if best is None or ll > best[2]:
            best = (cp, rm, ll, len(trace) - 1)
    cp, rm, ll, n_iter = best
    return LCMFit(rm, cp[:m].copy(), ll, n_iter, traces)


def harden(post: np.ndarray) -> np.ndarray:
    """s1 iff posterior > 0.5; an exact 0.5 hardens to s0."""
    return (np.asarray(post) > 0.5).astype(np.int8)


def stack_level(fits: list[LCMFit], islands: list[list[int]], data) -> np.ndarray:
    """Hardened level data: one column per island latent, one row per user."""
    data = np.asarray(data)
    out = np.empty((data.shape[0], len(islands)), dtype=np.int8)
    for k, (fit, isl) in enumerate(zip(fits, islands)):
        out[:, k] = harden(fit.posterior(data[:, isl]))
    return out


# --- orientation -----------------------------------------------------------

def expected_consumption(model: LatentTreeModel) -> np.ndarray:
    """``f[v, x]``: expected number of s1 observed descendants of ``v`` given ``v = x``."""
    f = np.zeros((model.num_nodes, 2))
    for v in model.postorder:
        if model.observed[v]:
            f[v] = (0.0, 1.0)
        else:
            for c in model.children[v]:
                f[v] += model.cpts[c] @ f[c]
    return f


def orient_states(model: LatentTreeModel) -> LatentTreeModel:
    """Relabel latent states so that s1 carries the higher expected consumption."""
    f = expected_consumption(model)
    swap = [int(v) for v in model.latent_ids if f[v, 0] > f[v, 1]]
    if not swap:
        return model
    cpts = model.cpts.copy()
    rm = model.root_marginal.copy()
    for z in swap:
        if model.parent[z] < 0:
            rm = rm[::-1].copy()
        else:
            cpts[z] = cpts[z][:, ::-1]
        for c in model.children[z]:
            cpts[c] = cpts[c][::-1, :]
    return model.replace(cpts=cpts, root_marginal=rm)


# --- full learner ----------------------------------------------------------

@dataclass
class LevelReport:
    level: int
    islands: list[list[str]]
    logliks: list[float]
    iterations: list[int]


@dataclass
class LearnReport:
    levels: list[LevelReport] = field(default_factory=list)
    degenerate_items: list[str] = field(default_factory=list)
    top_chain: list[str] = field(default_factory=list)
    global_iterations: int = 0
    global_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_loglik: float = float("nan")

    def to_text(self) -> str:
        out = ["# learning report"]
        for lv in self.levels:
            out.append(f"[level {lv.level}]")
            out.append(f"islands = {len(lv.islands)}")
            for k, (isl, ll, it) in enumerate(zip(lv.islands, lv.logliks, lv.iterations)):
                out.append(f"island {k}: loglik={ll:.10g} em_iterations={it} "
                           f"members={','.join(isl)}")
        if self.top_chain:
            out.append(f"top_chain = {','.join(self.top_chain)}")
        out.append("[global]")
        out.append(f"em_iterations = {self.global_iterations}")
        if len(self.global_trace):
            out.append(f"initial_loglik = {self.global_trace[0]:.10g}")
            out.append(f"converged_loglik = {self.global_trace[-1]:.10g}")
        out.append(f"final_loglik = {self.final_loglik:.10g}")
        out.append("[degenerate]")
        out.append(f"count = {len(self.degenerate_items)}")
        if self.degenerate_items:
            out.append("items = " + ",".join(self.degenerate_items))
        return "\n".join(out) + "\n"


def _smoothed_pair_cpt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    t = np.ones((2, 2))
    np.add.at(t, (a.astype(np.int64), b.astype(np.int64)), 1.0)
    return t / t.sum(axis=1, keepdims=True)


def _chain_order(mi: np.ndarray) -> list[int]:
    k = mi.shape[0]
    iu = np.triu_indices(k, 1)
    best = int(np.argmax(mi[iu]))
    chain = [int(iu[0][best]), int(iu[1][best])]
    rest = [v for v in range(k) if v not in chain]
    while rest:
        head = mi[chain[0], rest]
        tail = mi[chain[-1], rest]
        if head.max() > tail.max():
            chain.insert(0, rest.pop(int(np.argmax(head))))
        else:
            chain.append(rest.pop(int(np.argmax(tail))))
    return chain


def learn_hlta(matrix: FeedbackMatrix, config: LearnConfig | None = None
               ) -> tuple[LatentTreeModel, LearnReport]:
    """Learn a latent tree over the matrix items. Returns the model and a report."""
    config = config or LearnConfig()
    n_users, n_items = matrix.num_users, matrix.num_items
    if n_items < 2 or n_users < 1:
        raise ValueError(f"learning needs >= 2 items and >= 1 user, got "
                         f"{n_items} items and {n_users} users")
    X = matrix.to_dense(np.int8)
    counts = X.sum(axis=0)
    degenerate = np.flatnonzero(counts == 0)
    active = np.flatnonzero(counts > 0)
    if len(active) < 2:
        active, degenerate = np.arange(n_items), np.zeros(0, dtype=np.int64)
    report = LearnReport(degenerate_items=[matrix.item_keys[i] for i in degenerate])

    # level-by-level structure
    level_islands: list[list[list[int]]] = []
    level_fits: list[list[LCMFit]] = []
    data = X[:, active]
    names = [matrix.item_keys[i] for i in active]
    level = 1
    while True:
        mi = pairwise_mi(data, config.mi_smoothing)
        # co-consumption is a positive association; negative dependence (for
        # instance from users who consumed nothing being absent) is not a pattern
        mi = np.where(positive_association(data, config.mi_smoothing), mi, 0.0)
        islands = build_islands(mi, config.max_island_size, config.island_threshold(n_users))
        fits = [fit_lcm(data[:, isl], config, np.random.default_rng([config.rng_seed, level, k]))
                for k, isl in enumerate(islands)]
        level_islands.append(islands)
        level_fits.append(fits)
        report.levels.append(LevelReport(level, [[names[j] for j in isl] for isl in islands],
                                         [f.loglik for f in fits], [f.n_iter for f in fits]))
        log.info("level %d: %d islands", level, len(islands))
        if len(islands) <= config.min_top_level_vars:
            break
        data = stack_level(fits, islands, data)
        names = [f"Z{level}.{k}" for k in range(len(islands))]
        level += 1
    top_level = level

    # node ids: items first, then latents level by level in island order
    labels = list(matrix.item_keys)
    observed = [True] * n_items
    lvl = [0] * n_items
    parent = [-1] * n_items
    cpts = [np.eye(2) for _ in range(n_items)]
    first_id = []
    for li, islands in enumerate(level_islands, start=1):
        first_id.append(len(labels))
        for k in range(len(islands)):
            labels.append(f"Z{li}.{k}")
            observed.append(False)
            lvl.append(li)
            parent.append(-1)
            cpts.append(np.eye(2))
    for li, (islands, fits) in enumerate(zip(level_islands, level_fits), start=1):
        below = active if li == 1 else first_id[li - 2] + np.arange(len(level_islands[li - 2]))
        for k, (isl, fit) in enumerate(zip(islands, fits)):
            z = first_id[li - 1] + k
            for pos, j in enumerate(isl):
                child = int(below[j])
                parent[child] = z
                cpts[child] = fit.cpts[pos]
    root_marginal = None
    top_islands, top_fits = level_islands[-1], level_fits[-1]
    top_ids = first_id[-1] + np.arange(len(top_islands))
    if len(top_islands) == 1:
        root_marginal = top_fits[0].root_marginal
    else:
        # join the remaining top latents in a chain, head becomes the root
        hard = stack_level(top_fits, top_islands, data)
        chain = _chain_order(pairwise_mi(hard, config.mi_smoothing))
        k = len(chain)
        p1 = (hard[:, chain[0]].sum() + 1.0) / (n_users + 2.0)
        root_marginal = np.array([1 - p1, p1])
        for i, c in enumerate(chain):
            node = int(top_ids[c])
            lvl[node] = top_level + (k - 1 - i)
            if i > 0:
                parent[node] = int(top_ids[chain[i - 1]])
                cpts[node] = _smoothed_pair_cpt(hard[:, chain[i - 1]], hard[:, c])
        report.top_chain = [labels[int(top_ids[c])] for c in chain]
    if len(degenerate):
        host = first_id[0]
        for i in degenerate:
            p = (counts[i] + 1.0) / (n_users + 2.0)
            parent[i] = host
            cpts[i] = np.array([[1 - p, p], [1 - p, p]])

    model = LatentTreeModel.build(labels, observed, parent, lvl, root_marginal, np.array(cpts))

    # global refinement over full item rows
    rows = np.full((n_users, model.num_nodes), -1, dtype=np.int8)
    rows[:, :n_items] = X
    rows, weights = compress_rows(rows)
    gc, grm, trace = tree_em(model.parent, model.cpts, model.root_marginal, rows, weights,
                             config.em_max_iters, config.em_tol, model.postorder)
    report.global_iterations = len(trace) - 1
    report.global_trace = trace
    report.final_loglik = tree_loglik(model.parent, gc, grm, rows, weights, model.postorder)
    model = orient_states(model.replace(cpts=gc, root_marginal=grm))
    return check(model), report
