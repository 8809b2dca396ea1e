"""Synthetic video benchmarks for the descriptor and matching tracks.

A benchmark is a set of reference videos, positive queries that each copy
one reference interval through a transform chain, and distractor queries
that copy nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import descriptors, retrieval
from .localization import LocalizeConfig, localize, matching_eval
from .transforms import FAMILIES, plant_segments, render_video, sample_chain


@dataclass
class VideoBenchmark:
    refs: list
    queries: list
    gt: list  # PlantedSegment per positive query
    chains: dict  # query_id -> transform chain

    @property
    def positive_pairs(self) -> set:
        return {(g.query_id, g.ref_id) for g in self.gt}


def build_benchmark(seed: int, num_refs: int = 50, num_positive: int = 50, num_distractors: int = 50,
                    families=FAMILIES, chain_len: int = 1, fps: float = 1.0,
                    ref_len_range=(20, 30), query_len_range=(15, 25), copy_len_range=(8, 12),
                    size: int = 32) -> VideoBenchmark:
    """Positive query ``i`` copies an interval of reference ``i % num_refs``."""
    rng = np.random.default_rng([int(seed), 0xBE7C])
    refs = []
    for i in range(num_refs):
        length = int(rng.integers(ref_len_range[0], ref_len_range[1] + 1))
        refs.append(render_video(f"R{i:03d}", length, fps, seed, stream=1000 + i, size=size))

    queries, gt, chains = [], [], {}
    for i in range(num_positive):
        ref = refs[i % num_refs]
        qlen = int(rng.integers(query_len_range[0], query_len_range[1] + 1))
        q = render_video(f"Q{i:03d}", qlen, fps, seed, stream=100000 + i, size=size)
        n_ref, n_q = len(ref), len(q)
        span = int(rng.integers(copy_len_range[0], copy_len_range[1] + 1))
        span = min(span, n_ref, n_q)  # frames
        qs = int(rng.integers(0, n_q - span + 1))
        rs = int(rng.integers(0, n_ref - span + 1))
        chain = sample_chain(rng, chain_len, families)
        interval = ((q.timestamps[qs], q.timestamps[qs + span - 1]),
                    (ref.timestamps[rs], ref.timestamps[rs + span - 1]))
        gt.extend(plant_segments(ref, q, [interval], chain))
        chains[q.video_id] = chain
        queries.append(q)
    for i in range(num_distractors):
        qlen = int(rng.integers(query_len_range[0], query_len_range[1] + 1))
        queries.append(render_video(f"D{i:03d}", qlen, fps, seed, stream=200000 + i, size=size))
    return VideoBenchmark(refs, queries, gt, chains)


def describe(models, videos) -> dict:
    """video_id -> ensemble descriptor set over ``models``."""
    out = {}
    for v in videos:
        out[v.video_id] = descriptors.ensemble([descriptors.extract_video(m, v) for m in models])
    return out


def descriptor_map(models, bench: VideoBenchmark) -> float:
    """Micro-AP of the ensemble of ``models`` over all query/reference pairs."""
    refs = describe(models, bench.refs)
    queries = describe(models, bench.queries)
    ranked = retrieval.search_all(list(queries.values()), list(refs.values()), top_k=len(refs))
    return retrieval.micro_ap(ranked, bench.positive_pairs)


def matching_scores(models, bench: VideoBenchmark, config: LocalizeConfig | None = None):
    """(segment recall, micro-AP) of TN localization over positive query/ref pairs and distractors."""
    refs = describe(models, bench.refs)
    queries = describe(models, bench.queries)
    preds = []
    for g in bench.gt:
        preds.extend(localize(queries[g.query_id], refs[g.ref_id], config))
    return matching_eval(preds, bench.gt)
