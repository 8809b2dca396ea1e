"""``fcpl`` command-line entry point.

Exit codes: 0 success, 1 user error (bad flags, missing or corrupt input,
bad config), 2 internal error.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys

from . import dataio, descriptors, retrieval
from .benchmark import build_benchmark
from .errors import (ConfigError, CorruptFile, EmptyGroundTruth, IntervalOutOfBounds, MismatchedSets,
                     MissingVideo)
from .localization import LocalizeConfig, localize, matching_eval, read_matches, write_matches
from .net import load_checkpoint
from .transforms import FAMILIES, build_dataset

log = logging.getLogger("fcpl")

USER_ERRORS = (OSError, ConfigError, CorruptFile, EmptyGroundTruth, IntervalOutOfBounds,
               MismatchedSets, MissingVideo)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _families(text):
    fams = [f.strip() for f in text.split(",") if f.strip()]
    unknown = [f for f in fams if f not in FAMILIES]
    if unknown or not fams:
        raise argparse.ArgumentTypeError(f"unknown transform families: {unknown or text!r}")
    return fams


def _fds_files(root):
    if not os.path.isdir(root):
        raise FileNotFoundError(f"{root}: no such directory")
    return sorted(os.path.join(root, n) for n in os.listdir(root) if n.endswith(".fds"))


def _load_sets(root):
    sets = [descriptors.load(p) for p in _fds_files(root)]
    if not sets:
        raise FileNotFoundError(f"{root}: no .fds descriptor files")
    return sets


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(a):
    ds = build_dataset(a.classes, a.copies, a.seed, (a.min_chain, a.max_chain), a.families, a.size)
    path = dataio.export_dataset(ds, a.out)
    print(f"wrote {len(ds) * (a.copies + 1)} images to {path}")


def cmd_gen_videos(a):
    bench = build_benchmark(a.seed, a.refs, a.positives, a.distractors, a.families, a.chain_len, a.fps,
                            copy_len_range=(a.min_copy, a.max_copy), size=a.size)
    for sub, videos in (("refs", bench.refs), ("queries", bench.queries)):
        for v in videos:
            dataio.export_video(v, os.path.join(a.out, sub))
    dataio.write_gt(bench.gt, os.path.join(a.out, "gt.tsv"))
    print(f"wrote {len(bench.refs)} references, {len(bench.queries)} queries, {len(bench.gt)} segments")


def cmd_train(a):
    from .trainer import TrainConfig, extract_gt_image_pairs, run_pipeline

    config = TrainConfig.from_file(a.config)
    dataset = dataio.load_dataset(a.data)
    pairs = None
    if a.gt_pairs:
        vroot = a.videos or os.path.dirname(os.path.abspath(a.gt_pairs))
        gt = dataio.read_gt(a.gt_pairs)
        queries = {v.video_id: v for v in dataio.load_video_dir(os.path.join(vroot, "queries"))}
        refs = {v.video_id: v for v in dataio.load_video_dir(os.path.join(vroot, "refs"))}
        pairs = extract_gt_image_pairs(gt, queries, refs)
        if not pairs:
            log.warning("ground truth yielded no image pairs: stage 3 skipped")
    else:
        log.warning("no --gt-pairs given: stage 3 skipped")
    res = run_pipeline(config, dataset, pairs or None, a.out)
    print(f"wrote {1 + len(res.compatible) + len(res.finetuned)} checkpoints to {a.out}")


def cmd_extract(a):
    models = sorted(glob.glob(a.models))
    if not models:
        raise FileNotFoundError(f"{a.models}: no checkpoints match")
    videos = dataio.load_video_dir(a.videos)
    for mpath in models:
        params = load_checkpoint(mpath)
        mdir = os.path.join(a.out, os.path.splitext(os.path.basename(mpath))[0])
        os.makedirs(mdir, exist_ok=True)
        for v in videos:
            descriptors.save(descriptors.extract_video(params, v), os.path.join(mdir, f"{v.video_id}.fds"))
    print(f"extracted {len(videos)} videos with {len(models)} models")


def cmd_ensemble(a):
    """--in holds one sub-directory per model (or .fds files directly for a single model)."""
    subdirs = sorted(os.path.join(a.inp, n) for n in os.listdir(a.inp) if os.path.isdir(os.path.join(a.inp, n)))
    model_dirs = subdirs or [a.inp]
    per_model = []
    for d in model_dirs:
        per_model.append({os.path.basename(p): p for p in _fds_files(d)})
    names = sorted(per_model[0])
    if not names:
        raise FileNotFoundError(f"{a.inp}: no .fds descriptor files")
    for m, d in zip(per_model[1:], model_dirs[1:]):
        if sorted(m) != names:
            raise MismatchedSets(f"{d}: video list differs from {model_dirs[0]}")
    os.makedirs(a.out, exist_ok=True)
    for name in names:
        sets = [descriptors.load(m[name]) for m in per_model]
        descriptors.save(descriptors.ensemble(sets), os.path.join(a.out, name))
    print(f"ensembled {len(names)} videos over {len(model_dirs)} models")


def cmd_search(a):
    ranked = retrieval.search_all(_load_sets(a.queries), _load_sets(a.refs), a.top_k)
    retrieval.write_ranked(ranked, a.out)
    print(f"wrote {len(ranked)} ranked pairs to {a.out}")


def cmd_eval_descriptor(a):
    ranked = retrieval.read_ranked(a.ranked)
    gt = {(g.query_id, g.ref_id) for g in dataio.read_gt(a.gt)}
    print(f"muAP\t{retrieval.micro_ap(retrieval.sort_pairs(ranked), gt)!r}")


def cmd_localize(a):
    cfg = LocalizeConfig(a.threshold, a.max_gap, a.min_path_len, a.max_segments)
    matches = []
    refs = _load_sets(a.refs)
    for q in _load_sets(a.queries):
        for r in refs:
            matches.extend(localize(q, r, cfg))
    write_matches(matches, a.out)
    print(f"wrote {len(matches)} segment matches to {a.out}")


def cmd_eval_matching(a):
    preds = read_matches(a.pred)
    recall, ap = matching_eval(preds, dataio.read_gt(a.gt), a.iou)
    print(f"muAP\t{ap!r}")
    print(f"recall@{a.iou:g}\t{recall!r}")


def cmd_grad_check(a):
    from .gradcheck import loss_gradient_errors

    errs = loss_gradient_errors(a.seed, a.eps)
    for name, err in errs.items():
        print(f"{name}\t{err!r}")
    worst = max(errs.values())
    print(f"max_rel_error\t{worst!r}")
    if worst >= a.tol:
        log.error("gradient check failed: %g >= %g", worst, a.tol)
        return 2
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fcpl", description="Feature-compatible progressive learning for video copy detection.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("gen-data", help="generate a labeled training dataset")
    c.add_argument("--classes", type=int, required=True)
    c.add_argument("--copies", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--families", type=_families, default=list(FAMILIES), help="comma-separated transform menu")
    c.add_argument("--min-chain", type=int, default=1)
    c.add_argument("--max-chain", type=int, default=3)
    c.add_argument("--size", type=int, default=32)
    c.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("gen-videos", help="generate reference/query videos with planted copies and gt.tsv")
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--refs", type=int, default=50)
    c.add_argument("--positives", type=int, default=50)
    c.add_argument("--distractors", type=int, default=50)
    c.add_argument("--families", type=_families, default=list(FAMILIES))
    c.add_argument("--chain-len", type=int, default=1)
    c.add_argument("--fps", type=float, default=1.0)
    c.add_argument("--min-copy", type=int, default=8, help="shortest copied segment (s)")
    c.add_argument("--max-copy", type=int, default=12, help="longest copied segment (s)")
    c.add_argument("--size", type=int, default=32)
    c.set_defaults(func=cmd_gen_videos)

    c = sub.add_parser("train", help="run the three training stages")
    c.add_argument("--config", required=True, help="key=value config file")
    c.add_argument("--data", required=True, help="dataset directory from gen-data")
    c.add_argument("--gt-pairs", help="gt.tsv from gen-videos; stage 3 is skipped without it")
    c.add_argument("--videos", help="directory holding refs/ and queries/ (default: next to --gt-pairs)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_train)

    c = sub.add_parser("extract", help="per-frame descriptors, one sub-directory per model")
    c.add_argument("--models", required=True, help="checkpoint glob, e.g. 'run/compat_*.fcpl'")
    c.add_argument("--videos", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_extract)

    c = sub.add_parser("ensemble", help="average per-model descriptors")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_ensemble)

    c = sub.add_parser("search", help="rank every query/reference pair")
    c.add_argument("--queries", required=True)
    c.add_argument("--refs", required=True)
    c.add_argument("--top-k", type=int, default=10)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_search)

    c = sub.add_parser("eval-descriptor", help="micro-AP of a ranked file")
    c.add_argument("--ranked", required=True)
    c.add_argument("--gt", required=True)
    c.set_defaults(func=cmd_eval_descriptor)

    c = sub.add_parser("localize", help="temporal-network segment localization")
    c.add_argument("--queries", required=True)
    c.add_argument("--refs", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--threshold", type=float, default=0.5)
    c.add_argument("--max-gap", type=float, default=3.0)
    c.add_argument("--min-path-len", type=int, default=3)
    c.add_argument("--max-segments", type=int, default=8)
    c.set_defaults(func=cmd_localize)

    c = sub.add_parser("eval-matching", help="segment recall and micro-AP of a matches file")
    c.add_argument("--pred", required=True)
    c.add_argument("--gt", required=True)
    c.add_argument("--iou", type=float, default=0.5)
    c.set_defaults(func=cmd_eval_matching)

    c = sub.add_parser("grad-check", help="finite-difference check of every loss gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--eps", type=float, default=1e-4)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except USER_ERRORS as exc:
        print(f"fcpl {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"fcpl {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
