# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def best_path_dp(const double[::1] q, const double[::1] r, const double[::1] s,
                 const unsigned char[::1] alive, double max_gap):
    cdef Py_ssize_t n = q.shape[0]
    cdef double[::1] score = np.zeros(n)
    cdef long[::1] length = np.zeros(n, dtype=np.int_)
    cdef double[::1] start = np.zeros(n)
    cdef long[::1] pred = np.full(n, -1, dtype=np.int_)
    cdef Py_ssize_t v, u, best = -1
    cdef double qv, rv, sv, bs, bq, cs, cq, dq, dr
    cdef long bl, bp, cl

    for v in range(n):
        if not alive[v]:
            continue
        qv = q[v]; rv = r[v]; sv = s[v]
        bs = sv; bl = 1; bq = qv; bp = -1
        u = v - 1
        while u >= 0:
            dq = qv - q[u]
            if dq > max_gap:
                break
            if alive[u] and dq > 0.0:
                dr = rv - r[u]
                if 0.0 < dr <= max_gap:
                    cs = score[u] + sv
                    cl = length[u] + 1
                    cq = start[u]
                    if cs > bs or (cs == bs and (cl > bl or (cl == bl and cq < bq))):
                        bs = cs; bl = cl; bq = cq; bp = u
            u -= 1
        score[v] = bs; length[v] = bl; start[v] = bq; pred[v] = bp
        if best < 0:
            best = v
        else:
            cs = score[best]; cl = length[best]; cq = start[best]
            if bs > cs or (bs == cs and (bl > cl or (bl == cl and bq < cq))):
                best = v

    path = []
    while best >= 0:
        path.append(best)
        best = pred[best]
    path.reverse()
    return np.asarray(path, dtype=np.int64)


def average_precision(const unsigned char[::1] labels, Py_ssize_t n_positives):
    cdef Py_ssize_t i, hits = 0
    cdef double total = 0.0
    for i in range(labels.shape[0]):
        if labels[i]:
            hits += 1
            total += <double>hits / <double>(i + 1)
    return total / n_positives
