"""Descriptor-track search and micro average precision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CorruptFile, DimensionMismatch, EmptyGroundTruth


@dataclass
class RankedPair:
    query_id: str
    ref_id: str
    score: float
    is_positive: bool = False


def frame_score(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"descriptor dims differ: {a.shape} vs {b.shape}")
    return float(a @ b)


def similarity_matrix(q, r) -> np.ndarray:
    if q.dim != r.dim:
        raise DimensionMismatch(f"descriptor dims differ: {q.dim} vs {r.dim}")
    return q.values.astype(np.float64) @ r.values.astype(np.float64).T


def video_pair_score(q, r) -> float:
    """Best frame-to-frame similarity between two videos."""
    if len(q) == 0 or len(r) == 0:
        raise ValueError("video_pair_score needs non-empty descriptor sets")
    return float(similarity_matrix(q, r).max())


def sort_pairs(pairs):
    return sorted(pairs, key=lambda p: (-p.score, p.query_id, p.ref_id))


def search_all(queries, refs, top_k: int = 10) -> list:
    """Top-k references per query, merged into one list by descending score."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    out = []
    for q in queries:
        per_q = sort_pairs(RankedPair(q.video_id, r.video_id, video_pair_score(q, r)) for r in refs)
        out.extend(per_q[:top_k])
    return sort_pairs(out)


def micro_ap(ranked, gt) -> float:
    """Average precision over one global ranking.

    ``ranked`` must be in rank order; ``gt`` is a set of positive
    (query_id, ref_id) pairs. Positives absent from the ranking still count in
    the denominator. Marks ``is_positive`` on each pair.
    """
    gt = set(gt)
    if not gt:
        raise EmptyGroundTruth("ground truth has no positive pairs")
    labels = np.zeros(len(ranked), dtype=np.uint8)
    seen = set()
    for i, p in enumerate(ranked):
        key = (p.query_id, p.ref_id)
        # a pair listed twice can only be credited once
        p.is_positive = key in gt and key not in seen
        labels[i] = p.is_positive
        seen.add(key)
    return kernels.average_precision(labels, len(gt))


def ap_from_labels(labels, n_positives: int) -> float:
    if n_positives <= 0:
        raise EmptyGroundTruth("no positives")
    return kernels.average_precision(labels, n_positives)


def write_ranked(ranked, path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in ranked:
            fh.write(f"{p.query_id}\t{p.ref_id}\t{p.score!r}\n")


def read_ranked(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise CorruptFile(f"{path}:{lineno}: expected 3 tab-separated columns")
            try:
                score = float(parts[2])
            except ValueError:
                raise CorruptFile(f"{path}:{lineno}: bad score {parts[2]!r}") from None
            out.append(RankedPair(parts[0], parts[1], score))
    return out
