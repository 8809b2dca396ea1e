"""Temporal-network (TN) localization of copied segments.

Frame pairs whose similarity clears a threshold become nodes of a DAG; an
edge joins two nodes when both the query and the reference time move
strictly forward by at most ``max_gap_s``. The maximum-weight path through
that DAG is one aligned copy. Paths are extracted greedily, suppressing the
time spans of each emitted segment before searching again.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CorruptFile
from .retrieval import similarity_matrix


@dataclass(frozen=True)
class MatchCandidate:
    q_time: float
    r_time: float
    score: float


@dataclass
class SegmentMatch:
    q_start: float
    q_end: float
    r_start: float
    r_end: float
    score: float = 0.0
    path_len: int = 0
    query_id: str = ""
    ref_id: str = ""


@dataclass
class LocalizeConfig:
    candidate_threshold: float = 0.5
    max_gap_s: float = 3.0
    min_path_len: int = 3
    max_segments: int = 8


def candidates(q, r, threshold: float = 0.5) -> list:
    """Every frame pair scoring at least ``threshold``, sorted by (q_time, r_time)."""
    if not -1.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (-1, 1)")
    if len(q) == 0 or len(r) == 0:
        return []
    sims = similarity_matrix(q, r)
    qi, ri = np.nonzero(sims >= threshold)  # row-major -> already (q, r) ordered
    return [MatchCandidate(float(q.timestamps[a]), float(r.timestamps[b]), float(sims[a, b]))
            for a, b in zip(qi, ri)]


class TemporalNetwork:
    """Candidates plus the implicit edge rule; the virtual source links to
    every node and every node links to the virtual sink."""

    def __init__(self, nodes, max_gap_s: float):
        self.nodes = sorted(nodes, key=lambda c: (c.q_time, c.r_time))
        self.max_gap_s = float(max_gap_s)
        self.q = np.array([c.q_time for c in self.nodes], dtype=np.float64)
        self.r = np.array([c.r_time for c in self.nodes], dtype=np.float64)
        self.s = np.array([c.score for c in self.nodes], dtype=np.float64)

    def __len__(self):
        return len(self.nodes)

    def has_edge(self, u: int, v: int) -> bool:
        dq = self.q[v] - self.q[u]
        dr = self.r[v] - self.r[u]
        return 0.0 < dq <= self.max_gap_s and 0.0 < dr <= self.max_gap_s

    def edges(self) -> list:
        n = len(self.nodes)
        return [(u, v) for u in range(n) for v in range(n) if self.has_edge(u, v)]


def build_network(cands, max_gap_s: float = 3.0) -> TemporalNetwork:
    return TemporalNetwork(cands, max_gap_s)


def best_path(net: TemporalNetwork, alive=None) -> list:
    """Maximum total-score path; ties go to the longer path, then the earlier start."""
    if len(net) == 0:
        return []
    if alive is None:
        alive = np.ones(len(net), dtype=np.uint8)
    idx = kernels.best_path_dp(net.q, net.r, net.s, alive, net.max_gap_s)
    return [net.nodes[i] for i in idx]


def localize(q, r, config: LocalizeConfig | None = None) -> list:
    cfg = config or LocalizeConfig()
    net = build_network(candidates(q, r, cfg.candidate_threshold), cfg.max_gap_s)
    alive = np.ones(len(net), dtype=np.uint8)
    out = []
    while len(out) < cfg.max_segments and alive.any():
        idx = kernels.best_path_dp(net.q, net.r, net.s, alive, net.max_gap_s)
        if len(idx) < cfg.min_path_len:
            break
        qs, qe = net.q[idx[0]], net.q[idx[-1]]
        rs, re = net.r[idx[0]], net.r[idx[-1]]
        out.append(SegmentMatch(float(qs), float(qe), float(rs), float(re),
                                float(net.s[idx].sum()), len(idx), q.video_id, r.video_id))
        kill = ((net.q >= qs) & (net.q <= qe)) | ((net.r >= rs) & (net.r <= re))
        alive[kill] = 0
        alive[idx] = 0
    return out


# ---------------------------------------------------------------------------
# evaluation


def interval_iou(a0: float, a1: float, b0: float, b1: float) -> float:
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    if union <= 0.0:
        return 1.0 if (a0, a1) == (b0, b1) else 0.0
    return inter / union


def segment_iou(pred, gt) -> float:
    """The smaller of the query-side and reference-side temporal IoUs."""
    return min(interval_iou(pred.q_start, pred.q_end, gt.q_start, gt.q_end),
               interval_iou(pred.r_start, pred.r_end, gt.r_start, gt.r_end))


def matching_eval(predicted, gt, iou_threshold: float = 0.5):
    """Returns (segment recall, pair micro-AP).

    A prediction is a true positive when both its query and reference
    intervals reach ``iou_threshold`` against a not-yet-claimed ground-truth
    segment of the same video pair. Predictions claim ground truth greedily in
    descending score order.
    """
    gt = list(gt)
    if not gt:
        return 0.0, 0.0
    preds = sorted(predicted, key=lambda p: (-p.score, p.query_id, p.ref_id, p.q_start, p.r_start))
    claimed = [False] * len(gt)
    labels = np.zeros(len(preds), dtype=np.uint8)
    for i, p in enumerate(preds):
        best, best_iou = -1, -1.0
        for j, g in enumerate(gt):
            if claimed[j] or (g.query_id, g.ref_id) != (p.query_id, p.ref_id):
                continue
            qi = interval_iou(p.q_start, p.q_end, g.q_start, g.q_end)
            ri = interval_iou(p.r_start, p.r_end, g.r_start, g.r_end)
            if qi >= iou_threshold and ri >= iou_threshold and min(qi, ri) > best_iou:
                best, best_iou = j, min(qi, ri)
        if best >= 0:
            claimed[best] = True
            labels[i] = 1
    recall = float(labels.sum()) / len(gt)
    return recall, kernels.average_precision(labels, len(gt))


def write_matches(matches, path):
    rows = sorted(matches, key=lambda m: (-m.score, m.query_id, m.ref_id, m.q_start, m.r_start))
    with open(path, "w", encoding="utf-8") as fh:
        for m in rows:
            fh.write(f"{m.query_id}\t{m.ref_id}\t{m.q_start!r}\t{m.q_end!r}\t"
                     f"{m.r_start!r}\t{m.r_end!r}\t{m.score!r}\n")


def read_matches(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 7:
                raise CorruptFile(f"{path}:{lineno}: expected 7 tab-separated columns")
            try:
                qs, qe, rs, re, sc = map(float, parts[2:])
            except ValueError:
                raise CorruptFile(f"{path}:{lineno}: non-numeric field") from None
            out.append(SegmentMatch(qs, qe, rs, re, sc, 0, parts[0], parts[1]))
    return out
