"""Per-frame descriptor extraction, feature-level ensembling and FDS1 files."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFile, DegenerateNorm, MismatchedSets
from .net import NORM_FLOOR, NetworkParams, flatten, forward_batch

MAGIC = b"FDS1"
VERSION = 1
UNIT_TOL = 1e-6


@dataclass
class VideoDescriptorSet:
    video_id: str
    timestamps: np.ndarray  # (n,) float64
    values: np.ndarray  # (n, dim) float32, unit rows

    def __len__(self):
        return len(self.timestamps)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def equals(self, other: "VideoDescriptorSet") -> bool:
        """Bitwise equality."""
        return (
            self.video_id == other.video_id
            and self.timestamps.tobytes() == other.timestamps.tobytes()
            and self.values.dtype == other.values.dtype
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


def _to_descriptors(raw: np.ndarray) -> np.ndarray:
    """Row-normalize in float64, store as float32.

    Rows already within UNIT_TOL of unit length are kept as they are, so
    re-normalizing stored descriptors is the identity.
    """
    raw = np.asarray(raw, dtype=np.float64)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms <= NORM_FLOOR):
        bad = int(np.argmin(norms[:, 0]))
        raise DegenerateNorm(f"descriptor row {bad} has norm {float(norms[bad, 0]):.3g}")
    keep = np.abs(norms - 1.0) <= UNIT_TOL
    out = np.where(keep, raw, raw / norms).astype(np.float32)
    # float32 rounding can push a freshly normalized row off unit length
    n32 = np.linalg.norm(out.astype(np.float64), axis=1)
    if np.any(np.abs(n32 - 1.0) > UNIT_TOL):  # pragma: no cover - float32 has ~6e-8 resolution
        raise DegenerateNorm("descriptor lost unit norm after float32 rounding")
    return out


def extract_video(model: NetworkParams, video, batch: int = 256) -> VideoDescriptorSet:
    """One unit-norm descriptor per frame."""
    X = flatten(video.frames)
    raws = [forward_batch(model, X[i:i + batch]) for i in range(0, len(X), batch)]
    raw = np.concatenate(raws) if raws else np.zeros((0, model.embed_dim))
    try:
        values = _to_descriptors(raw)
    except DegenerateNorm as exc:
        raise DegenerateNorm(f"video {video.video_id}: {exc}") from None
    return VideoDescriptorSet(video.video_id, np.asarray(video.timestamps, dtype=np.float64).copy(), values)


def ensemble(per_model_sets) -> VideoDescriptorSet:
    """Per-frame mean of the models' descriptors, re-normalized.

    Sets are summed in a canonical order (by their bytes) so the result does
    not depend on the order models are listed in.
    """
    sets = list(per_model_sets)
    if not sets:
        raise MismatchedSets("no descriptor sets given")
    first = sets[0]
    for other in sets[1:]:
        if other.video_id != first.video_id:
            raise MismatchedSets(f"video ids differ: {first.video_id!r} vs {other.video_id!r}")
        if other.timestamps.shape != first.timestamps.shape or not np.array_equal(other.timestamps, first.timestamps):
            raise MismatchedSets(f"timestamps differ for {first.video_id!r}")
        if other.values.shape != first.values.shape:
            raise MismatchedSets(f"descriptor shapes differ for {first.video_id!r}")
    ordered = sorted(sets, key=lambda s: s.values.tobytes())
    acc = np.zeros(first.values.shape, dtype=np.float64)
    for s in ordered:
        acc += s.values
    mean = acc / len(ordered)
    return VideoDescriptorSet(first.video_id, first.timestamps.copy(), _to_descriptors(mean))


def save(dset: VideoDescriptorSet, path):
    ts = np.asarray(dset.timestamps, dtype=np.float64)
    if len(ts) > 1 and not np.all(np.diff(ts) > 0):
        raise ValueError("timestamps must be strictly increasing")
    vid = dset.video_id.encode("utf-8")
    n, dim = dset.values.shape
    rec = np.zeros(n, dtype=[("t", "<f8"), ("v", "<f4", (dim,))])
    rec["t"] = ts
    rec["v"] = dset.values
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(vid)))
        fh.write(vid)
        fh.write(struct.pack("<II", dim, n))
        fh.write(rec.tobytes())


def load(path) -> VideoDescriptorSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    try:
        version, idlen = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CorruptFile(f"{path}: unsupported version {version}")
        vid = data[12:12 + idlen]
        if len(vid) != idlen:
            raise CorruptFile(f"{path}: truncated video id")
        video_id = vid.decode("utf-8")
        dim, n = struct.unpack_from("<II", data, 12 + idlen)
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: truncated header ({exc})") from None
    off = 20 + idlen
    if dim == 0:
        raise CorruptFile(f"{path}: zero descriptor dim")
    rec_t = np.dtype([("t", "<f8"), ("v", "<f4", (dim,))])
    if len(data) - off != n * rec_t.itemsize:
        raise CorruptFile(f"{path}: expected {n} records of dim {dim}, found {len(data) - off} payload bytes")
    rec = np.frombuffer(data, dtype=rec_t, count=n, offset=off)
    ts = rec["t"].astype(np.float64)
    values = np.ascontiguousarray(rec["v"], dtype=np.float32)
    if n > 1 and not np.all(np.diff(ts) > 0):
        raise CorruptFile(f"{path}: timestamps not strictly increasing")
    return VideoDescriptorSet(video_id, ts, values)
