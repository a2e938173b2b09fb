# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sampling kernels: single-site Gibbs sweeps and exact block updates.

The fast paths work with exponentiated potentials scaled by their maxima and
max-normalised linear messages whose log scale is tracked separately.  When a
scaled quantity drops below ``TINY`` the update is redone in the log domain,
where message sums use a scaled sum with a log-sum-exp fallback per entry.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.uint8_t u8

cdef double TINY = 1e-280


cdef inline double _pval(const double[:, :, ::1] pw, i64 tab, i64 d, Py_ssize_t a, Py_ssize_t b) nogil:
    if d == 0:
        return pw[tab, a, b]
    return pw[tab, b, a]


cdef inline Py_ssize_t _draw(double[::1] v, Py_ssize_t k, double u, double[::1] w) nogil:
    """Inverse-CDF draw from softmax(v[:k]); leaves normalised probs in w."""
    cdef Py_ssize_t a
    cdef double mx = v[0], tot = 0.0, thr, cum = 0.0
    for a in range(1, k):
        if v[a] > mx:
            mx = v[a]
    for a in range(k):
        w[a] = exp(v[a] - mx)
        tot += w[a]
    thr = u * tot
    cdef Py_ssize_t pick = -1
    for a in range(k):
        cum += w[a]
        if pick < 0 and cum > thr:
            pick = a
        w[a] /= tot
    if pick < 0:
        pick = k - 1
        while pick > 0 and w[pick] <= 0.0:
            pick -= 1
    return pick


cdef inline Py_ssize_t _draw_lin(double[::1] w, Py_ssize_t k, double tot, double u) nogil:
    """Inverse-CDF draw from nonnegative weights w[:k] summing to tot."""
    cdef Py_ssize_t a
    cdef double cum = 0.0, thr = u * tot
    for a in range(k):
        cum += w[a]
        if cum > thr:
            return a
    a = k - 1
    while a > 0 and w[a] <= 0.0:
        a -= 1
    return a


def gibbs_sweep(i64[::1] x, const double[:, ::1] unary, const double[:, ::1] eunary,
                const double[:, :, ::1] pairwise, const double[:, :, ::1] epair,
                const i64[:, ::1] nbr, const i64[:, ::1] nbr_table, const i64[:, ::1] nbr_dir,
                const i64[::1] order, const double[::1] u, double[:, ::1] cond_out, bint store):
    cdef Py_ssize_t k = unary.shape[1]
    cdef Py_ssize_t t, s, a, i, j
    cdef double[::1] v = np.empty(k)
    cdef double[::1] w = np.empty(k)
    cdef double mx, tot
    with nogil:
        for t in range(order.shape[0]):
            i = order[t]
            for a in range(k):
                w[a] = eunary[i, a]
            for s in range(4):
                j = nbr[i, s]
                if j >= 0:
                    for a in range(k):
                        w[a] *= _pval(epair, nbr_table[i, s], nbr_dir[i, s], a, x[j])
            mx = 0.0
            tot = 0.0
            for a in range(k):
                tot += w[a]
                if w[a] > mx:
                    mx = w[a]
            if mx > TINY:
                x[i] = _draw_lin(w, k, tot, u[t])
                if store:
                    for a in range(k):
                        cond_out[i, a] = w[a] / tot
                continue
            # all scaled weights underflowed: log domain
            for a in range(k):
                v[a] = unary[i, a]
            for s in range(4):
                j = nbr[i, s]
                if j >= 0:
                    for a in range(k):
                        v[a] += _pval(pairwise, nbr_table[i, s], nbr_dir[i, s], a, x[j])
            x[i] = _draw(v, k, u[t], w)
            if store:
                for a in range(k):
                    cond_out[i, a] = w[a]


def block_update(i64[::1] x, const double[:, ::1] unary, const double[:, ::1] eunary,
                 const double[:, :, ::1] pairwise, const double[:, :, ::1] epair, const double[::1] pmax,
                 const double[:, ::1] pst,
                 const i64[:, ::1] nbr, const i64[:, ::1] nbr_table, const i64[:, ::1] nbr_dir,
                 const i64[::1] order, const i64[::1] parent_pos, const i64[::1] parent_slot,
                 const u8[::1] in_side, const double[::1] u, double[:, ::1] marg_out, bint want_marg):
    cdef double log_z
    cdef bint ok
    ok, log_z = _block_linear(x, unary, eunary, epair, pmax, pst, nbr, nbr_table, nbr_dir, order, parent_pos,
                              parent_slot, in_side, u, marg_out, want_marg)
    if ok:
        return log_z
    return _block_log(x, unary, pairwise, epair, pmax, nbr, nbr_table, nbr_dir, order, parent_pos,
                      parent_slot, in_side, u, marg_out, want_marg)


cdef tuple _block_linear(i64[::1] x, const double[:, ::1] unary, const double[:, ::1] eunary, const double[:, :, ::1] epair,
                         const double[::1] pmax, const double[:, ::1] pst, const i64[:, ::1] nbr, const i64[:, ::1] nbr_table,
                         const i64[:, ::1] nbr_dir, const i64[::1] order, const i64[::1] parent_pos,
                         const i64[::1] parent_slot, const u8[::1] in_side, const double[::1] u,
                         double[:, ::1] marg_out, bint want_marg):
    """Scaled linear-domain pass; returns (False, 0) as soon as anything underflows.

    Row ``pst[t] = (flag, off, diag - off)`` marks scaled table ``t`` as
    constant off the diagonal and on it, so a message costs O(K) not O(K^2).

    Nothing is written to ``x`` or ``marg_out`` before the passes succeed.
    """
    cdef Py_ssize_t m = order.shape[0]
    cdef Py_ssize_t k = eunary.shape[1]
    cdef double[:, ::1] lin = np.empty((m, k))
    cdef double[:, ::1] msg = np.empty((m, k))
    cdef double[:, ::1] full
    cdef double[::1] w = np.empty(k)
    cdef i64[::1] lab = np.empty(m, dtype=np.int64)
    cdef double[::1] logscale = np.zeros(m)
    cdef Py_ssize_t t, s, a, b, c, j, p
    cdef i64 tab, d
    cdef double mx, acc, tot, log_z = 0.0
    cdef bint bad = False
    if want_marg:
        full = np.empty((m, k))
    with nogil:
        for t in range(m):
            c = order[t]
            mx = unary[c, 0]
            for a in range(k):
                lin[t, a] = eunary[c, a]
                if unary[c, a] > mx:
                    mx = unary[c, a]
            log_z += mx
            for s in range(4):
                j = nbr[c, s]
                if j >= 0 and not in_side[j]:
                    tab = nbr_table[c, s]
                    log_z += pmax[tab]
                    for a in range(k):
                        lin[t, a] *= _pval(epair, tab, nbr_dir[c, s], a, x[j])
            mx = 0.0
            for a in range(k):
                if lin[t, a] > mx:
                    mx = lin[t, a]
            if mx <= TINY:
                bad = True
                break
            for a in range(k):
                lin[t, a] /= mx
            logscale[t] = log(mx)

        if not bad:
            for t in range(m - 1, -1, -1):
                p = parent_pos[t]
                if p < 0:
                    acc = 0.0
                    for a in range(k):
                        acc += lin[t, a]
                    log_z += logscale[t] + log(acc)
                    continue
                c = order[t]
                s = parent_slot[t]
                tab = nbr_table[c, s]
                d = nbr_dir[c, s]
                mx = 0.0
                if pst[tab, 0] != 0.0:
                    tot = 0.0
                    for a in range(k):
                        tot += lin[t, a]
                    for b in range(k):
                        acc = pst[tab, 1] * tot + pst[tab, 2] * lin[t, b]
                        msg[t, b] = acc
                        if acc > mx:
                            mx = acc
                else:
                    for b in range(k):
                        acc = 0.0
                        for a in range(k):
                            acc += lin[t, a] * _pval(epair, tab, d, a, b)
                        msg[t, b] = acc
                        if acc > mx:
                            mx = acc
                if mx <= TINY:
                    bad = True
                    break
                for b in range(k):
                    msg[t, b] /= mx
                    if msg[t, b] < TINY:
                        bad = True
                log_z += logscale[t] + pmax[tab] + log(mx)
                mx = 0.0
                for b in range(k):
                    lin[p, b] *= msg[t, b]
                    if lin[p, b] > mx:
                        mx = lin[p, b]
                if mx <= TINY or bad:
                    bad = True
                    break
                for b in range(k):
                    lin[p, b] /= mx
                logscale[p] += log(mx)

        if not bad and want_marg:
            for t in range(m):
                p = parent_pos[t]
                if p < 0:
                    for a in range(k):
                        full[t, a] = lin[t, a]
                else:
                    c = order[t]
                    s = parent_slot[t]
                    tab = nbr_table[c, s]
                    d = nbr_dir[c, s]
                    # parent belief without this child's message
                    mx = 0.0
                    tot = 0.0
                    for b in range(k):
                        w[b] = full[p, b] / msg[t, b]
                        tot += w[b]
                        if w[b] > mx:
                            mx = w[b]
                    if pst[tab, 0] != 0.0:
                        for a in range(k):
                            full[t, a] = lin[t, a] * (pst[tab, 1] * tot + pst[tab, 2] * w[a]) / mx
                    else:
                        for a in range(k):
                            acc = 0.0
                            for b in range(k):
                                acc += w[b] * _pval(epair, tab, d, a, b)
                            full[t, a] = lin[t, a] * acc / mx
                acc = 0.0
                for a in range(k):
                    acc += full[t, a]
                if acc <= TINY:
                    bad = True
                    break
                for a in range(k):
                    full[t, a] /= acc

        if not bad:
            for t in range(m):
                p = parent_pos[t]
                c = order[t]
                acc = 0.0
                if p < 0:
                    for a in range(k):
                        w[a] = lin[t, a]
                        acc += w[a]
                else:
                    s = parent_slot[t]
                    tab = nbr_table[c, s]
                    d = nbr_dir[c, s]
                    b = lab[p]
                    for a in range(k):
                        w[a] = lin[t, a] * _pval(epair, tab, d, a, b)
                        acc += w[a]
                if acc <= TINY:
                    bad = True
                    break
                lab[t] = _draw_lin(w, k, acc, u[t])

        if not bad:
            for t in range(m):
                x[order[t]] = lab[t]
                if want_marg:
                    for a in range(k):
                        marg_out[order[t], a] = full[t, a]
    if bad:
        return False, 0.0
    return True, log_z


cdef double _block_log(i64[::1] x, const double[:, ::1] unary, const double[:, :, ::1] pairwise,
                       const double[:, :, ::1] epair, const double[::1] pmax,
                       const i64[:, ::1] nbr, const i64[:, ::1] nbr_table, const i64[:, ::1] nbr_dir,
                       const i64[::1] order, const i64[::1] parent_pos, const i64[::1] parent_slot,
                       const u8[::1] in_side, const double[::1] u, double[:, ::1] marg_out, bint want_marg):
    cdef Py_ssize_t m = order.shape[0]
    cdef Py_ssize_t k = unary.shape[1]
    cdef double[:, ::1] up = np.empty((m, k))
    cdef double[:, ::1] msg = np.zeros((m, k))
    cdef double[:, ::1] full
    cdef double[::1] w = np.empty(k)
    cdef double[::1] v = np.empty(k)
    cdef Py_ssize_t t, s, a, b, c, j, p
    cdef i64 tab, d
    cdef double mx, acc, top, log_z = 0.0, scale
    if want_marg:
        full = np.empty((m, k))
    with nogil:
        # evidence from the fixed complement
        for t in range(m):
            c = order[t]
            for a in range(k):
                up[t, a] = unary[c, a]
            for s in range(4):
                j = nbr[c, s]
                if j >= 0 and not in_side[j]:
                    for a in range(k):
                        up[t, a] += _pval(pairwise, nbr_table[c, s], nbr_dir[c, s], a, x[j])

        # leaf-to-root pass
        for t in range(m - 1, -1, -1):
            p = parent_pos[t]
            mx = up[t, 0]
            for a in range(1, k):
                if up[t, a] > mx:
                    mx = up[t, a]
            if p < 0:
                acc = 0.0
                for a in range(k):
                    acc += exp(up[t, a] - mx)
                log_z += mx + log(acc)
                continue
            c = order[t]
            s = parent_slot[t]
            tab = nbr_table[c, s]
            d = nbr_dir[c, s]
            for a in range(k):
                w[a] = exp(up[t, a] - mx)
            top = -1e308
            for b in range(k):
                acc = 0.0
                for a in range(k):
                    acc += w[a] * _pval(epair, tab, d, a, b)
                if acc > TINY:
                    msg[t, b] = mx + pmax[tab] + log(acc)
                else:
                    # scaled sum underflowed: direct log-sum-exp
                    scale = -1e308
                    for a in range(k):
                        if up[t, a] + _pval(pairwise, tab, d, a, b) > scale:
                            scale = up[t, a] + _pval(pairwise, tab, d, a, b)
                    acc = 0.0
                    for a in range(k):
                        acc += exp(up[t, a] + _pval(pairwise, tab, d, a, b) - scale)
                    msg[t, b] = scale + log(acc)
                if msg[t, b] > top:
                    top = msg[t, b]
            for b in range(k):
                msg[t, b] -= top
                up[p, b] += msg[t, b]
            log_z += top

        if want_marg:
            for t in range(m):
                p = parent_pos[t]
                if p < 0:
                    for a in range(k):
                        full[t, a] = up[t, a]
                else:
                    c = order[t]
                    s = parent_slot[t]
                    tab = nbr_table[c, s]
                    d = nbr_dir[c, s]
                    mx = full[p, 0] - msg[t, 0]
                    for b in range(1, k):
                        if full[p, b] - msg[t, b] > mx:
                            mx = full[p, b] - msg[t, b]
                    for b in range(k):
                        w[b] = exp(full[p, b] - msg[t, b] - mx)
                    for a in range(k):
                        acc = 0.0
                        for b in range(k):
                            acc += w[b] * _pval(epair, tab, d, a, b)
                        if acc > TINY:
                            full[t, a] = up[t, a] + mx + pmax[tab] + log(acc)
                        else:
                            scale = -1e308
                            for b in range(k):
                                if _pval(pairwise, tab, d, a, b) + full[p, b] - msg[t, b] > scale:
                                    scale = _pval(pairwise, tab, d, a, b) + full[p, b] - msg[t, b]
                            acc = 0.0
                            for b in range(k):
                                acc += exp(_pval(pairwise, tab, d, a, b) + full[p, b] - msg[t, b] - scale)
                            full[t, a] = up[t, a] + scale + log(acc)
                mx = full[t, 0]
                for a in range(1, k):
                    if full[t, a] > mx:
                        mx = full[t, a]
                acc = 0.0
                for a in range(k):
                    w[a] = exp(full[t, a] - mx)
                    acc += w[a]
                c = order[t]
                for a in range(k):
                    marg_out[c, a] = w[a] / acc

        # root-to-leaf draws
        for t in range(m):
            p = parent_pos[t]
            c = order[t]
            if p < 0:
                for a in range(k):
                    v[a] = up[t, a]
            else:
                s = parent_slot[t]
                tab = nbr_table[c, s]
                d = nbr_dir[c, s]
                b = x[order[p]]
                for a in range(k):
                    v[a] = up[t, a] + _pval(pairwise, tab, d, a, b)
            x[c] = _draw(v, k, u[t], w)
    return log_z
