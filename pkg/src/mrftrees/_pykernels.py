"""Pure-Python sampling kernels.

Same signatures as the compiled ``_kernels`` module; used when the extension
is unavailable or ``MRFTREES_PURE_PYTHON`` is set.  Everything here stays in
the log domain, so the scaled-table arguments (``eunary``, ``pst``) are
accepted only for parity.
"""
import numpy as np
from scipy.special import logsumexp


def _pair(pairwise, nbr_table, nbr_dir, c, s):
    """``M[a, b] = log psi(x_c = a, x_nbr = b)`` for slot ``s`` of node ``c``."""
    table = pairwise[nbr_table[c, s]]
    return table if nbr_dir[c, s] == 0 else table.T


def _draw(v, u):
    w = np.exp(v - v.max())
    cdf = np.cumsum(w)
    a = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if a >= len(w):
        a = int(np.flatnonzero(w > 0)[-1])
    return a, w / cdf[-1]


def gibbs_sweep(x, unary, eunary, pairwise, epair, nbr, nbr_table, nbr_dir, order, u, cond_out, store):
    for t in range(len(order)):
        i = order[t]
        v = unary[i].copy()
        for s in range(4):
            j = nbr[i, s]
            if j >= 0:
                v += _pair(pairwise, nbr_table, nbr_dir, i, s)[:, x[j]]
        a, p = _draw(v, u[t])
        if store:
            cond_out[i] = p
        x[i] = a


def block_update(x, unary, eunary, pairwise, epair, pmax, pst, nbr, nbr_table, nbr_dir,
                 order, parent_pos, parent_slot, in_side, u, marg_out, want_marg):
    m = len(order)
    k = unary.shape[1]
    up = np.empty((m, k))
    for t in range(m):
        c = order[t]
        v = unary[c].copy()
        for s in range(4):
            j = nbr[c, s]
            if j >= 0 and not in_side[j]:
                v += _pair(pairwise, nbr_table, nbr_dir, c, s)[:, x[j]]
        up[t] = v

    edge = [None] * m
    msgs = np.zeros((m, k))
    log_z = 0.0
    for t in range(m - 1, -1, -1):
        p = parent_pos[t]
        if p < 0:
            log_z += logsumexp(up[t])
            continue
        edge[t] = _pair(pairwise, nbr_table, nbr_dir, order[t], parent_slot[t])
        msg = logsumexp(up[t][:, None] + edge[t], axis=0)
        top = msg.max()
        msgs[t] = msg - top
        log_z += top
        up[p] += msgs[t]

    if want_marg:
        full = up.copy()
        for t in range(m):
            p = parent_pos[t]
            if p >= 0:
                outside = full[p] - msgs[t]
                full[t] = up[t] + logsumexp(edge[t] + outside[None, :], axis=1)
            w = np.exp(full[t] - full[t].max())
            marg_out[order[t]] = w / w.sum()

    for t in range(m):
        p = parent_pos[t]
        v = up[t] if p < 0 else up[t] + edge[t][:, x[order[p]]]
        x[order[t]] = _draw(v, u[t])[0]
    return log_z
