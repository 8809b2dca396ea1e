"""Three-stage progressive training.

1. ``train_base``         - metric (CosFace) loss only.
2. ``train_compatible``   - metric loss + lambda_r * compatibility loss against
                            the frozen base model's features of the originals.
3. ``finetune_gt``        - adds lambda_pn * (L_pos - L_neg) on ground-truth
                            image pairs with in-batch hardest negatives.

Optimization is plain minibatch SGD with momentum and a constant learning rate.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .errors import ConfigError, IntervalOutOfBounds, MissingVideo, NonFiniteLoss
from .net import NetworkParams, backward_batch, flatten, forward_batch, init_params, save_checkpoint
from .transforms import PlantedSegment, dataset_arrays

log = logging.getLogger(__name__)

GtVideoPair = PlantedSegment

METRIC_COLUMNS = ("stage", "model_index", "epoch", "l_mtr", "l_com", "l_pos", "l_neg", "l_final")


@dataclass
class TrainConfig:
    lambda_r: float = 1.0
    lambda_pn: float = 0.5
    cosface_s: float = 30.0
    cosface_m: float = 0.35
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    num_models: int = 3
    # not in the minimal contract, but needed to size runs
    finetune_epochs: int = 10
    finetune_learning_rate: float = 0.0
    hidden_dim: int = 128
    embed_dim: int = 32

    def __post_init__(self):
        if self.batch_size < 4:
            raise ConfigError("batch_size must be >= 4 (mining needs in-batch negatives)")
        for name in ("cosface_s", "learning_rate", "num_models", "hidden_dim", "embed_dim"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("lambda_r", "lambda_pn", "momentum", "epochs", "finetune_epochs", "finetune_learning_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.cosface_m < 1:
            raise ConfigError("cosface_m must be in [0, 1)")

    def model_seed(self, index: int) -> int:
        """Seed of compatible model ``index`` (0-based); the base model uses ``seed``."""
        return self.seed * 1000 + index + 1

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = (s.strip() for s in line.split("=", 1))
                if key not in fields:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                conv = int if fields[key] in (int, "int") else float
                try:
                    kwargs[key] = conv(value)
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
        return cls(**kwargs)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in dataclasses.fields(self))


@dataclass
class GtImagePair:
    query_frame: np.ndarray
    ref_frame: np.ndarray
    query_id: str
    ref_id: str
    q_time: float
    r_time: float


@dataclass
class TrainingData:
    X: np.ndarray  # (n, input_dim) float64
    labels: np.ndarray
    is_original: np.ndarray
    num_classes: int

    @classmethod
    def from_dataset(cls, dataset) -> "TrainingData":
        images, labels, is_orig = dataset_arrays(dataset)
        return cls(flatten(images), labels, is_orig, len(dataset))

    @property
    def originals(self) -> np.ndarray:
        """Rows of the original images, indexed by class id."""
        order = np.argsort(self.labels[self.is_original], kind="stable")
        return self.X[self.is_original][order]


@dataclass
class BaseFeatureTable:
    """Frozen raw base-model features of every original, indexed by class id."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.array(self.features, dtype=np.float64)
        self.features.setflags(write=False)

    def __len__(self):
        return len(self.features)

    def checksum(self) -> str:
        return hashlib.sha256(self.features.tobytes()).hexdigest()


@dataclass
class Batch:
    """A training batch. Rows ``[:n_class]`` carry class labels; the remaining
    rows are ``n_pairs`` first members followed by ``n_pairs`` second members
    of ground-truth pairs."""

    X: np.ndarray
    labels: np.ndarray  # (n_class,)
    orig_rows: np.ndarray  # indices (< n_class) of originals
    base_feats: np.ndarray | None  # (len(orig_rows), embed_dim)
    n_pairs: int = 0

    @property
    def n_class(self) -> int:
        return len(self.labels)


@dataclass
class ModelState:
    params: NetworkParams
    head: L.ClassifierHead
    curve: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# objective


def batch_objective(params: NetworkParams, head: L.ClassifierHead, batch: Batch,
                    lambda_r: float, lambda_pn: float = 0.0, stage: int = 2):
    """Loss breakdown and gradients (params, head.W) for one batch."""
    E, Z = forward_batch(params, batch.X, return_hidden=True)
    nc = batch.n_class
    dE = np.zeros_like(E)
    br = L.LossBreakdown(lambda_r=lambda_r, lambda_pn=lambda_pn, stage=stage)

    br.l_mtr, dEc, dW = L.cosface_loss(E[:nc], batch.labels, head)
    dE[:nc] += dEc

    if batch.base_feats is not None and len(batch.orig_rows):
        br.l_com, dEo = L.compat_loss(batch.base_feats, E[batch.orig_rows])
        if lambda_r != 0.0:
            np.add.at(dE, batch.orig_rows, lambda_r * dEo)

    if stage == 3 and batch.n_pairs:
        m = batch.n_pairs
        p1 = np.arange(nc, nc + m)
        p2 = p1 + m
        groups = np.concatenate([batch.labels, np.arange(m) + head.W.shape[0], np.arange(m) + head.W.shape[0]])
        n1 = L.mine_hardest_negatives(E, groups, p1)
        n2 = L.mine_hardest_negatives(E, groups, p2)
        br.l_pos, dA, dB = L.pos_loss(E[p1], E[p2])
        br.l_neg, dP1, dN1, dP2, dN2 = L.neg_loss(E[p1], E[n1], E[p2], E[n2])
        if lambda_pn != 0.0:
            np.add.at(dE, p1, lambda_pn * (dA - dP1))
            np.add.at(dE, p2, lambda_pn * (dB - dP2))
            np.add.at(dE, n1, -lambda_pn * dN1)
            np.add.at(dE, n2, -lambda_pn * dN2)

    grads = backward_batch(params, batch.X, dE, Z)
    return br, grads, dW


# ---------------------------------------------------------------------------
# optimization loop


class _Momentum:
    def __init__(self, arrays: dict, lr: float, momentum: float):
        self.lr, self.mu = lr, momentum
        self.vel = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, arrays: dict, grads: dict):
        for k, p in arrays.items():
            v = self.vel[k]
            v *= self.mu
            v -= self.lr * grads[k]
            p += v


def _check_finite(br: L.LossBreakdown, stage: int, model_index: int, epoch: int, step: int):
    if not np.all(np.isfinite(br.terms())):
        raise NonFiniteLoss(
            f"non-finite loss at stage {stage}, model {model_index}, epoch {epoch}, step {step}: "
            f"l_mtr={br.l_mtr} l_com={br.l_com} l_pos={br.l_pos} l_neg={br.l_neg}")


def _run(state: ModelState, batches_for_epoch, epochs: int, config: TrainConfig,
         lambda_r: float, lambda_pn: float, stage: int, model_index: int, lr: float | None = None):
    arrays = dict(state.params.arrays(), headW=state.head.W)
    opt = _Momentum(arrays, config.learning_rate if lr is None else lr, config.momentum)
    for epoch in range(1, epochs + 1):
        sums = np.zeros(5)
        count = 0
        for step, batch in enumerate(batches_for_epoch(epoch)):
            br, g, dW = batch_objective(state.params, state.head, batch, lambda_r, lambda_pn, stage)
            _check_finite(br, stage, model_index, epoch, step)
            opt.step(arrays, dict(g.arrays(), headW=dW))
            sums += br.terms()
            count += 1
        means = sums / max(count, 1)
        row = dict(zip(METRIC_COLUMNS, (stage, model_index, epoch, *means)))
        state.curve.append(row)
        log.debug("stage %d model %d epoch %d: %s", stage, model_index, epoch, means)
    return state


def _class_batches(data: TrainingData, base_table, seed: int, batch_size: int):
    def gen(epoch):
        order = np.random.default_rng([seed, epoch, 0x5B]).permutation(len(data.X))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            yield _make_class_batch(data, base_table, idx)
    return gen


def _make_class_batch(data, base_table, idx, extra=None, n_pairs=0):
    orig = np.nonzero(data.is_original[idx])[0]
    base = None if base_table is None else base_table.features[data.labels[idx][orig]]
    X = data.X[idx] if extra is None else np.concatenate([data.X[idx], extra])
    return Batch(X, data.labels[idx], orig, base, n_pairs)


def _new_state(config: TrainConfig, data: TrainingData, seed: int) -> ModelState:
    params = init_params(seed, data.X.shape[1], config.hidden_dim, config.embed_dim)
    head = L.ClassifierHead.init(data.num_classes, config.embed_dim, seed, config.cosface_s, config.cosface_m)
    return ModelState(params, head)


def _as_data(dataset) -> TrainingData:
    return dataset if isinstance(dataset, TrainingData) else TrainingData.from_dataset(dataset)


def train_base(dataset, config: TrainConfig) -> ModelState:
    data = _as_data(dataset)
    if len(data.X) == 0:
        raise ValueError("empty dataset")
    state = _new_state(config, data, config.seed)
    return _run(state, _class_batches(data, None, config.seed, config.batch_size),
                config.epochs, config, 0.0, 0.0, 1, 0)


def precompute_base_features(f: NetworkParams, originals) -> BaseFeatureTable:
    X = flatten(originals) if np.asarray(originals).ndim == 4 else np.asarray(originals, dtype=np.float64)
    return BaseFeatureTable(forward_batch(f, X))


def train_compatible(dataset, base_table: BaseFeatureTable, config: TrainConfig, model_seed: int,
                     model_index: int = 1, lambda_r: float | None = None) -> ModelState:
    data = _as_data(dataset)
    if len(base_table) < data.num_classes:
        raise ValueError("base feature table does not cover every original")
    lam = config.lambda_r if lambda_r is None else lambda_r
    state = _new_state(config, data, model_seed)
    return _run(state, _class_batches(data, base_table, model_seed, config.batch_size),
                config.epochs, config, lam, 0.0, 2, model_index)


def finetune_gt(state: ModelState, dataset, base_table: BaseFeatureTable, gt_pairs, config: TrainConfig,
                model_seed: int, model_index: int = 1, epochs: int | None = None) -> ModelState:
    """Continue training ``state`` (copied, not mutated) on the full Stage-3 objective.

    Each batch holds ``batch_size // 2`` class-labeled images and
    ``batch_size // 4`` ground-truth pairs.
    """
    if not len(gt_pairs):
        raise ValueError("finetune_gt needs at least one ground-truth pair")
    data = _as_data(dataset)
    P1 = flatten(np.stack([p.query_frame for p in gt_pairs]))
    P2 = flatten(np.stack([p.ref_frame for p in gt_pairs]))
    n_cls = config.batch_size // 2
    n_pairs = max(1, config.batch_size // 4)
    state = ModelState(state.params.copy(), state.head.copy())

    def gen(epoch):
        rng = np.random.default_rng([model_seed, epoch, 0x57A6E3])
        order = rng.permutation(len(data.X))
        pair_order = np.concatenate([rng.permutation(len(P1))
                                     for _ in range(len(order) // n_cls // len(P1) + 2)])
        for b, i in enumerate(range(0, len(order), n_cls)):
            idx = order[i:i + n_cls]
            pidx = pair_order[b * n_pairs:(b + 1) * n_pairs]
            yield _make_class_batch(data, base_table, idx, np.concatenate([P1[pidx], P2[pidx]]), len(pidx))

    n_epochs = config.finetune_epochs if epochs is None else epochs
    lr = config.finetune_learning_rate or config.learning_rate
    return _run(state, gen, n_epochs, config, config.lambda_r, config.lambda_pn, 3, model_index, lr)


# ---------------------------------------------------------------------------
# ground-truth conversion


def extract_gt_image_pairs(pairs, query_videos: dict, ref_videos: dict) -> list:
    """Expand each ground-truth video pair into aligned frame pairs.

    Every query frame inside the query interval is paired with the reference
    frame nearest to ``r_start + (t - q_start)``.
    """
    out = []
    for gp in pairs:
        if gp.query_id not in query_videos:
            raise MissingVideo(f"query video {gp.query_id!r} not found")
        if gp.ref_id not in ref_videos:
            raise MissingVideo(f"reference video {gp.ref_id!r} not found")
        qv, rv = query_videos[gp.query_id], ref_videos[gp.ref_id]
        period = 1.0 / qv.fps
        if gp.q_end < gp.q_start or gp.r_end < gp.r_start:
            raise IntervalOutOfBounds(f"empty interval in {gp}")
        if abs((gp.q_end - gp.q_start) - (gp.r_end - gp.r_start)) > period + 1e-9:
            raise ValueError(f"interval lengths differ by more than one frame: {gp}")
        for v, (a, b) in ((qv, (gp.q_start, gp.q_end)), (rv, (gp.r_start, gp.r_end))):
            if len(v) == 0 or a < v.timestamps[0] - 1e-9 or b > v.timestamps[-1] + 1e-9:
                raise IntervalOutOfBounds(f"[{a}, {b}] outside video {v.video_id!r}")
        for qi, t in enumerate(qv.timestamps):
            if gp.q_start - 1e-9 <= t <= gp.q_end + 1e-9:
                target = gp.r_start + (t - gp.q_start)
                ri = int(np.argmin(np.abs(rv.timestamps - target)))
                out.append(GtImagePair(qv.frames[qi], rv.frames[ri], gp.query_id, gp.ref_id,
                                       float(t), float(rv.timestamps[ri])))
    return out


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    base: ModelState
    base_table: BaseFeatureTable
    compatible: list
    finetuned: list
    metrics: list


def format_metrics(rows) -> str:
    """One tab-separated line per epoch, columns as in METRIC_COLUMNS (no header)."""
    lines = []
    for r in rows:
        lines.append("\t".join([str(r["stage"]), str(r["model_index"]), str(r["epoch"])]
                               + [repr(float(r[c])) for c in METRIC_COLUMNS[3:]]))
    return "".join(line + "\n" for line in lines)


def run_pipeline(config: TrainConfig, dataset, gt_pairs=None, out_dir=None) -> PipelineResult:
    """Stage 1 -> Stage 2 (num_models) -> Stage 3 (skipped without gt_pairs)."""
    data = _as_data(dataset)
    log.info("stage 1: base model on %d images / %d classes", len(data.X), data.num_classes)
    base = train_base(data, config)
    table = precompute_base_features(base.params, data.originals)
    checksum = table.checksum()

    compatible, finetuned = [], []
    for i in range(config.num_models):
        log.info("stage 2: compatible model %d", i)
        compatible.append(train_compatible(data, table, config, config.model_seed(i), i + 1))
    if gt_pairs:
        for i, st in enumerate(compatible):
            log.info("stage 3: fine-tuning model %d on %d gt pairs", i, len(gt_pairs))
            finetuned.append(finetune_gt(st, data, table, gt_pairs, config, config.model_seed(i) + 7919, i + 1))
    elif gt_pairs is not None:
        log.warning("no ground-truth pairs: stage 3 skipped")
    assert table.checksum() == checksum, "base feature table changed during training"

    metrics = base.curve + [r for st in compatible for r in st.curve] + [r for st in finetuned for r in st.curve]
    result = PipelineResult(base, table, compatible, finetuned, metrics)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(base.params, os.path.join(out_dir, "base.fcpl"))
        for i, st in enumerate(compatible):
            save_checkpoint(st.params, os.path.join(out_dir, f"compat_{i}.fcpl"))
        for i, st in enumerate(finetuned):
            save_checkpoint(st.params, os.path.join(out_dir, f"finetuned_{i}.fcpl"))
        with open(os.path.join(out_dir, "metrics.tsv"), "w", encoding="utf-8") as fh:
            fh.write(format_metrics(metrics))
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(config.to_text())
    return result
