import graphlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fcpl import descriptors as D
from fcpl.errors import CorruptFile
from fcpl.localization import (LocalizeConfig, MatchCandidate, SegmentMatch, best_path, build_network,
                               candidates, interval_iou, localize, matching_eval, read_matches,
                               segment_iou, write_matches)
from fcpl.net import init_params
from fcpl.transforms import PlantedSegment, render_video, render_video_pair
from oracles import best_key_brute, path_key, random_candidates


def dset(values, vid="v", fps=1.0):
    values = np.asarray(values, dtype=np.float32)
    return D.VideoDescriptorSet(vid, np.arange(len(values), dtype=np.float64) / fps, values)


def onehots(n, dim, offset=0):
    return np.eye(dim, dtype=np.float32)[offset:offset + n]


@pytest.fixture(scope="module")
def model():
    return init_params(0, 3072, 128, 32)


def test_candidates_examples():
    a = dset(onehots(5, 8))
    c = candidates(a, a, 0.9)
    assert [(m.q_time, m.r_time) for m in c] == [(i, i) for i in range(5)]
    with pytest.raises(ValueError):
        candidates(a, a, 1.1)
    assert candidates(a, dset(onehots(3, 8, 5)), 0.5) == []


def test_candidates_sorted_and_above_threshold():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(6, 4))
    w = rng.normal(size=(7, 4))
    q = dset(v / np.linalg.norm(v, axis=1, keepdims=True))
    r = dset(w / np.linalg.norm(w, axis=1, keepdims=True))
    c = candidates(q, r, 0.2)
    assert [(m.q_time, m.r_time) for m in c] == sorted((m.q_time, m.r_time) for m in c)
    assert all(m.score >= 0.2 for m in c)


@given(st.integers(0, 10_000), st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_threshold_monotone(seed, t1, t2):
    rng = np.random.default_rng(seed)
    v, w = rng.normal(size=(5, 3)), rng.normal(size=(6, 3))
    q = dset(v / np.linalg.norm(v, axis=1, keepdims=True))
    r = dset(w / np.linalg.norm(w, axis=1, keepdims=True))
    lo, hi = sorted((t1, t2))
    assert len(candidates(q, r, hi)) <= len(candidates(q, r, lo))


def C(q, r, s=1.0):
    return MatchCandidate(float(q), float(r), s)


def test_edge_rule_examples():
    net = build_network([C(0, 0), C(1, 1), C(2, 2)], 2.0)
    assert net.has_edge(0, 1) and net.has_edge(1, 2) and net.has_edge(0, 2)
    assert not build_network([C(0, 0), C(1, 0)], 2.0).has_edge(0, 1)
    assert not build_network([C(0, 0), C(5, 5)], 2.0).has_edge(0, 1)


@given(st.integers(0, 10_000), st.integers(0, 25), st.sampled_from([1.0, 2.0, 3.0]))
def test_network_is_acyclic(seed, n, gap):
    net = build_network(random_candidates(np.random.default_rng(seed), n), gap)
    ts = graphlib.TopologicalSorter({v: [] for v in range(len(net))})
    for u, v in net.edges():
        ts.add(v, u)
    order = list(ts.static_order())  # raises CycleError on a cycle
    assert len(order) == len(net)


def test_best_path_examples():
    nodes = [C(0, 0), C(0, 2), C(1, 1), C(2, 2)]
    path = best_path(build_network(nodes, 3.0))
    assert [(m.q_time, m.r_time) for m in path] == [(0, 0), (1, 1), (2, 2)]
    assert len(best_path(build_network([C(3, 4)], 3.0))) == 1
    assert best_path(build_network([], 3.0)) == []


def test_best_path_tie_rules():
    # equal totals: the longer path wins
    longer = [C(0, 0, 0.5), C(1, 1, 0.5), C(5, 9, 1.0)]
    assert len(best_path(build_network(longer, 2.0))) == 2
    # equal total and length: the earlier start wins
    early = [C(0, 0, 1.0), C(4, 4, 1.0)]
    assert best_path(build_network(early, 2.0))[0].q_time == 0


@given(st.integers(0, 2**32 - 1), st.integers(0, 12), st.sampled_from([1.0, 2.0, 3.0]))
def test_best_path_matches_enumeration(seed, n, gap):
    nodes = random_candidates(np.random.default_rng(seed), n)
    net = build_network(nodes, gap)
    path = best_path(net)
    expect = best_key_brute(net.nodes, gap)
    if expect is None:
        assert path == []
        return
    idx = [net.nodes.index(m) for m in path]
    assert all(net.has_edge(u, v) for u, v in zip(idx, idx[1:]))
    assert path_key(net.nodes, idx) == expect


@given(st.integers(0, 10_000), st.integers(1, 30))
def test_path_strictly_increasing(seed, n):
    path = best_path(build_network(random_candidates(np.random.default_rng(seed), n, span=10), 3.0))
    for a, b in zip(path, path[1:]):
        assert b.q_time > a.q_time and b.r_time > a.r_time


def test_localize_identity_copy(model):
    ref, q, gt = render_video_pair(10, 10, ((1, 5), (2, 6)), 1.0, [], seed=3)
    # identity copies score exactly 1; the high threshold keeps look-alike frames out
    segs = localize(D.extract_video(model, q), D.extract_video(model, ref), LocalizeConfig(candidate_threshold=0.9))
    assert len(segs) == 1
    s = segs[0]
    for got, want in ((s.q_start, 1), (s.q_end, 5), (s.r_start, 2), (s.r_end, 6)):
        assert abs(got - want) <= 1.0
    assert s.path_len >= 3 and (s.query_id, s.ref_id) == (q.video_id, ref.video_id)


def test_localize_unrelated_videos_is_empty(model):
    a = D.extract_video(model, render_video("A", 20, 1.0, seed=1, stream=1))
    b = D.extract_video(model, render_video("B", 20, 1.0, seed=2, stream=2))
    assert localize(a, b, LocalizeConfig(candidate_threshold=0.9)) == []


def test_localize_two_copies(model):
    ref, q, gts = render_video_pair(30, 30, [((2, 7), (3, 8)), ((15, 21), (18, 24))], 1.0, [], seed=6)
    segs = localize(D.extract_video(model, q), D.extract_video(model, ref), LocalizeConfig(candidate_threshold=0.9))
    assert len(segs) == 2
    segs.sort(key=lambda m: m.q_start)
    assert segs[0].q_end < segs[1].q_start
    for s, g in zip(segs, gts):
        assert segment_iou(s, g) >= 0.8


@given(st.integers(0, 10_000))
def test_localize_segments_disjoint_in_query_time(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(15, 3))
    w = rng.normal(size=(15, 3))
    q = dset(v / np.linalg.norm(v, axis=1, keepdims=True), "q")
    r = dset(w / np.linalg.norm(w, axis=1, keepdims=True), "r")
    cfg = LocalizeConfig(candidate_threshold=0.3, min_path_len=2)
    segs = localize(q, r, cfg)
    assert localize(q, r, cfg) == segs
    spans = sorted((s.q_start, s.q_end) for s in segs)
    assert all(a[1] < b[0] for a, b in zip(spans, spans[1:]))
    assert len(segs) <= cfg.max_segments
    assert all(s.path_len >= cfg.min_path_len for s in segs)


def test_interval_iou():
    assert interval_iou(0, 10, 0, 10) == 1.0
    assert interval_iou(0, 10, 5, 15) == pytest.approx(5 / 15)
    assert interval_iou(0, 1, 2, 3) == 0.0
    assert interval_iou(3, 3, 3, 3) == 1.0


def gt_seg(qs=1.0, qe=5.0, rs=2.0, re=6.0, q="q", r="r"):
    return PlantedSegment(q, r, qs, qe, rs, re)


def pred(qs=1.0, qe=5.0, rs=2.0, re=6.0, score=1.0, q="q", r="r"):
    return SegmentMatch(qs, qe, rs, re, score, 3, q, r)


def test_matching_eval_examples():
    assert matching_eval([pred()], [gt_seg()]) == (1.0, 1.0)
    assert matching_eval([], [gt_seg()])[0] == 0.0
    # q-IoU 0.4: [0, 4] vs [0, 10]
    assert matching_eval([pred(0, 4, 0, 10)], [gt_seg(0, 10, 0, 10)])[0] == 0.0
    assert matching_eval([pred(r="other")], [gt_seg()])[0] == 0.0
    assert matching_eval([pred()], []) == (0.0, 0.0)


def test_matching_eval_consumes_each_gt_once():
    recall, ap = matching_eval([pred(score=0.9), pred(score=0.8)], [gt_seg()])
    assert recall == 1.0 and ap == 1.0
    recall, ap = matching_eval([pred(0, 100, 0, 100, score=0.9), pred(score=0.5)], [gt_seg()])
    assert recall == 1.0 and ap == pytest.approx(0.5)


def test_matches_file_round_trip(tmp_path):
    ms = [pred(score=0.25), pred(3.5, 9.0, 1.0, 6.5, score=0.75, q="q2")]
    write_matches(ms, tmp_path / "m.tsv")
    back = read_matches(tmp_path / "m.tsv")
    assert [(m.query_id, m.ref_id, m.q_start, m.q_end, m.r_start, m.r_end, m.score) for m in back] == \
        [("q2", "r", 3.5, 9.0, 1.0, 6.5, 0.75), ("q", "r", 1.0, 5.0, 2.0, 6.0, 0.25)]
    (tmp_path / "bad.tsv").write_text("q\tr\t1\t2\n")
    with pytest.raises(CorruptFile):
        read_matches(tmp_path / "bad.tsv")
