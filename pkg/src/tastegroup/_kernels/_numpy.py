"""Pure-numpy kernels. Vectorised over users, loop over tree nodes."""

import numpy as np


def tree_pass(order, parent, cpt, root_marginal, evidence):
    """Collect/distribute sum-product pass for a batch of evidence rows.

    Parameters
    ----------
    order : int array (n,)
        Post-order over the nodes (children before parents, root last).
    parent : int array (n,)
        Parent index per node, -1 for the root.
    cpt : float array (n, 2, 2)
        ``cpt[v, a, x] = P(v = x | parent(v) = a)``. The root entry is unused.
    root_marginal : float array (2,)
    evidence : int8 array (U, n)
        Observed state per node, -1 where unobserved.

    Returns
    -------
    loglik : (U,) evidence log-likelihood, -inf for impossible evidence
    belief : (U, n, 2) posterior marginal per node
    edge : (U, n, 2, 2) posterior joint of (parent state, node state); zero for the root
    """
    n_users, n = evidence.shape
    lam = np.ones((n_users, n, 2))
    msg = np.ones((n_users, n, 2))
    logz = np.zeros(n_users)
    belief = np.zeros((n_users, n, 2))
    edge = np.zeros((n_users, n, 2, 2))
    rows = np.arange(n_users)

    with np.errstate(divide="ignore", invalid="ignore"):
        for v in order:
            ev = evidence[:, v]
            obs = ev >= 0
            if obs.any():
                lam[rows[obs], v, 1 - ev[obs]] = 0.0
            s = lam[:, v, 0] + lam[:, v, 1]
            lam[:, v] /= np.where(s > 0, s, 1.0)[:, None]
            logz += np.log(s)
            p = parent[v]
            if p < 0:
                continue
            m = lam[:, v] @ cpt[v].T
            s = m[:, 0] + m[:, 1]
            m /= np.where(s > 0, s, 1.0)[:, None]
            logz += np.log(s)
            msg[:, v] = m
            lam[:, p] *= m

        root = order[-1]
        b = root_marginal[None, :] * lam[:, root]
        z = b[:, 0] + b[:, 1]
        loglik = logz + np.log(z)
        belief[:, root] = b / z[:, None]

        for v in order[::-1]:
            p = parent[v]
            if p < 0:
                continue
            m = msg[:, v]
            q = np.divide(belief[:, p], m, out=np.zeros_like(m), where=m > 0)
            j = q[:, :, None] * cpt[v][None, :, :] * lam[:, v, None, :]
            t = j.sum(axis=(1, 2))
            j /= t[:, None, None]
            edge[:, v] = j
            belief[:, v] = j[:, 0, :] + j[:, 1, :]

    return loglik, belief, edge


def accumulate_rows(indptr, indices, weights, n_cols):
    """``out[k, i] = sum_u weights[u, k] * X[u, i]`` for a binary CSR matrix X."""
    n_rows, k = weights.shape
    out = np.zeros((n_cols, k))
    counts = np.diff(indptr)
    np.add.at(out, indices, np.repeat(weights, counts, axis=0))
    return np.ascontiguousarray(out.T)
