"""Numba kernels mirroring :mod:`._numpy` one user at a time."""

import numpy as np
from numba import config, get_num_threads, njit, prange

# the system TBB is too old for numba; skip straight to OpenMP / workqueue
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True, nogil=True, error_model="numpy")
def _one_user(order, parent, cpt, root_marginal, ev, belief, edge):
    n = parent.shape[0]
    lam = np.ones((n, 2))
    msg = np.ones((n, 2))
    logz = 0.0

    for t in range(n):
        v = order[t]
        e = ev[v]
        if e == 0:
            lam[v, 1] = 0.0
        elif e == 1:
            lam[v, 0] = 0.0
        s = lam[v, 0] + lam[v, 1]
        if s > 0.0:
            lam[v, 0] /= s
            lam[v, 1] /= s
        logz += np.log(s)
        p = parent[v]
        if p < 0:
            continue
        m0 = cpt[v, 0, 0] * lam[v, 0] + cpt[v, 0, 1] * lam[v, 1]
        m1 = cpt[v, 1, 0] * lam[v, 0] + cpt[v, 1, 1] * lam[v, 1]
        s = m0 + m1
        if s > 0.0:
            m0 /= s
            m1 /= s
        logz += np.log(s)
        msg[v, 0] = m0
        msg[v, 1] = m1
        lam[p, 0] *= m0
        lam[p, 1] *= m1

    root = order[n - 1]
    b0 = root_marginal[0] * lam[root, 0]
    b1 = root_marginal[1] * lam[root, 1]
    z = b0 + b1
    belief[root, 0] = b0 / z
    belief[root, 1] = b1 / z

    for t in range(n - 1, -1, -1):
        v = order[t]
        p = parent[v]
        if p < 0:
            continue
        tot = 0.0
        for a in range(2):
            q = belief[p, a] / msg[v, a] if msg[v, a] > 0.0 else 0.0
            for x in range(2):
                val = q * cpt[v, a, x] * lam[v, x]
                edge[v, a, x] = val
                tot += val
        for a in range(2):
            for x in range(2):
                edge[v, a, x] /= tot
        belief[v, 0] = edge[v, 0, 0] + edge[v, 1, 0]
        belief[v, 1] = edge[v, 0, 1] + edge[v, 1, 1]

    return logz + np.log(z)


@njit(cache=True, error_model="numpy")
def _tree_pass_serial(order, parent, cpt, root_marginal, evidence):
    n_users, n = evidence.shape
    loglik = np.empty(n_users)
    belief = np.zeros((n_users, n, 2))
    edge = np.zeros((n_users, n, 2, 2))
    for u in range(n_users):
        loglik[u] = _one_user(order, parent, cpt, root_marginal, evidence[u],
                              belief[u], edge[u])
    return loglik, belief, edge


@njit(cache=True, parallel=True, error_model="numpy")
def _tree_pass_parallel(order, parent, cpt, root_marginal, evidence):
    n_users, n = evidence.shape
    loglik = np.empty(n_users)
    belief = np.zeros((n_users, n, 2))
    edge = np.zeros((n_users, n, 2, 2))
    for u in prange(n_users):
        loglik[u] = _one_user(order, parent, cpt, root_marginal, evidence[u],
                              belief[u], edge[u])
    return loglik, belief, edge


# below this many users thread dispatch costs more than it saves
PARALLEL_MIN_USERS = 256


def tree_pass(order, parent, cpt, root_marginal, evidence):
    # both variants run the same per-user kernel, so results are bit-identical;
    # the parallel one is compiled only once a large batch needs it
    if evidence.shape[0] < PARALLEL_MIN_USERS or get_num_threads() == 1:
        return _tree_pass_serial(order, parent, cpt, root_marginal, evidence)
    return _tree_pass_parallel(order, parent, cpt, root_marginal, evidence)


@njit(cache=True, nogil=True, error_model="numpy")
def accumulate_rows(indptr, indices, weights, n_cols):
    n_rows, k = weights.shape
    out = np.zeros((k, n_cols))
    for u in range(n_rows):
        for j in range(indptr[u], indptr[u + 1]):
            i = indices[j]
            for g in range(k):
                out[g, i] += weights[u, g]
    return out
