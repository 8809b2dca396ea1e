"""Pure-Python kernels. Reference implementation and import-time fallback
for the compiled ``_ckernels`` extension; both must agree exactly."""

import numpy as np


def best_path_dp(q, r, s, alive, max_gap):
    """Maximum-weight chain through candidates sorted by (q, r).

    An edge u -> v exists iff 0 < q[v]-q[u] <= max_gap and 0 < r[v]-r[u] <= max_gap.
    Path weight is the sum of node scores; ties prefer the longer path, then
    the earlier start time. Returns node indices in path order.
    """
    n = len(q)
    score = [0.0] * n
    length = [0] * n
    start = [0.0] * n
    pred = [-1] * n
    best = -1
    for v in range(n):
        if not alive[v]:
            continue
        qv, rv, sv = q[v], r[v], s[v]
        bs, bl, bq, bp = sv, 1, qv, -1
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
                        bs, bl, bq, bp = cs, cl, cq, u
            u -= 1
        score[v], length[v], start[v], pred[v] = bs, bl, bq, bp
        if best < 0:
            best = v
        else:
            cs, cl, cq = score[best], length[best], start[best]
            if bs > cs or (bs == cs and (bl > cl or (bl == cl and bq < cq))):
                best = v
    path = []
    while best >= 0:
        path.append(best)
        best = pred[best]
    path.reverse()
    return np.asarray(path, dtype=np.int64)


def average_precision(labels, n_positives):
    """Sum of precision at each positive rank, divided by ``n_positives``."""
    hits = 0
    total = 0.0
    for rank, lab in enumerate(labels, start=1):
        if lab:
            hits += 1
            total += hits / rank
    return total / n_positives
