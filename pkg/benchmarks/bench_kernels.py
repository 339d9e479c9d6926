"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings call both backend modules directly in one process (numba is
warmed up first, so compile time is excluded). ``--end-to-end`` also times a
full learn + evaluate run in subprocesses, once per backend, selected with
TASTEGROUP_DISABLE_NUMBA.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from tastegroup._kernels import _numpy
from tastegroup.ltm import random_model

try:
    from tastegroup._kernels import _numba
except ImportError:
    _numba = None

E2E = """
import time
from tastegroup import _kernels
from tastegroup.data import build_matrix
from tastegroup.hlta import LearnConfig, learn_hlta
from tastegroup.recommend import TasteGroupRecommender
from tastegroup.synthetic import SynthConfig, generate
recs, _ = generate(SynthConfig(num_users=3000, num_items=120, num_tastes=12,
                               consume_prob_in=0.8, consume_prob_out=0.02))
X, _ = build_matrix(recs)
learn_hlta(X, LearnConfig(max_island_size=10, em_max_iters=2))  # warm-up / jit
t = time.perf_counter()
model, _ = learn_hlta(X, LearnConfig(max_island_size=10))
TasteGroupRecommender(model, X, 1)
print(_kernels.BACKEND, time.perf_counter() - t)
"""


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def tree_case(n_nodes, n_users, seed=0):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_nodes)
    rows = np.full((n_users, m.num_nodes), -1, dtype=np.int8)
    rows[:, m.leaf_ids] = rng.random((n_users, len(m.leaf_ids))) < 0.2
    args = (m.postorder, m.parent, np.ascontiguousarray(m.cpts),
            np.ascontiguousarray(m.root_marginal), rows)
    return args


def accum_case(n_users, n_items, k, seed=0):
    rng = np.random.default_rng(seed)
    dense = rng.random((n_users, n_items)) < 0.05
    indptr = np.concatenate([[0], np.cumsum(dense.sum(1))]).astype(np.int64)
    indices = np.nonzero(dense)[1].astype(np.int64)
    return indptr, indices, rng.random((n_users, k)), n_items


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    if _numba is None:
        sys.exit("numba is not importable; nothing to compare")

    print(f"{'kernel':<14}{'case':<24}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for n_nodes, n_users in [(20, 1000), (100, 1000), (300, 5000), (1000, 2000)]:
        a = tree_case(n_nodes, n_users)
        _numba.tree_pass(*a)
        ref, got = _numpy.tree_pass(*a), _numba.tree_pass(*a)
        assert all(np.allclose(x, y, atol=1e-10) for x, y in zip(ref, got))
        tn = best_of(lambda: _numpy.tree_pass(*a), args.repeat)
        tb = best_of(lambda: _numba.tree_pass(*a), args.repeat)
        print(f"{'tree_pass':<14}{f'{n_nodes} nodes x {n_users} users':<24}"
              f"{tn:>10.4f}{tb:>10.4f}{tn / tb:>8.1f}x")
    for n_users, n_items, k in [(10000, 500, 8), (50000, 2000, 16)]:
        a = accum_case(n_users, n_items, k)
        _numba.accumulate_rows(*a)
        assert np.allclose(_numpy.accumulate_rows(*a), _numba.accumulate_rows(*a))
        tn = best_of(lambda: _numpy.accumulate_rows(*a), args.repeat)
        tb = best_of(lambda: _numba.accumulate_rows(*a), args.repeat)
        print(f"{'accumulate':<14}{f'{n_users}x{n_items}, K={k}':<24}"
              f"{tn:>10.4f}{tb:>10.4f}{tn / tb:>8.1f}x")

    if args.end_to_end:
        print("\nend to end (learn + memberships, 3000 users x 120 items)")
        for flag in ("1", "0"):
            env = dict(os.environ, TASTEGROUP_DISABLE_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", E2E], env=env, check=True,
                                 capture_output=True, text=True).stdout.split()
            print(f"  {out[0]:<8}{float(out[1]):.3f}s")


if __name__ == "__main__":
    main()
