"""On-disk formats for images, datasets, videos and ground truth.

* ``*.img``       - "IMG1", u32 width, u32 height, u32 channels, f32 LE pixels (row-major HWC)
* ``manifest.tsv`` - path, class_id, role (original|copy), chain
* video dirs      - ``<timestamp_ms>.img`` frames plus ``video.tsv`` (timestamp_s, file)
* ``gt.tsv``      - query_id, ref_id, q_start_s, q_end_s, r_start_s, r_end_s
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import CorruptFile
from .transforms import PlantedSegment, SyntheticVideo, TrainingClass, format_chain, parse_chain

IMG_MAGIC = b"IMG1"
_IMG_HEADER = struct.Struct("<4sIII")


def write_image(img, path):
    img = np.asarray(img, dtype="<f4")
    if img.ndim != 3:
        raise ValueError("image must be (height, width, channels)")
    h, w, c = img.shape
    with open(path, "wb") as fh:
        fh.write(_IMG_HEADER.pack(IMG_MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _IMG_HEADER.size:
        raise CorruptFile(f"{path}: truncated image header")
    magic, w, h, c = _IMG_HEADER.unpack_from(data)
    if magic != IMG_MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    need = _IMG_HEADER.size + 4 * w * h * c
    if len(data) != need:
        raise CorruptFile(f"{path}: expected {need} bytes, found {len(data)}")
    px = np.frombuffer(data, dtype="<f4", offset=_IMG_HEADER.size).reshape(h, w, c)
    return px.astype(np.float32)


def _tsv_rows(path, ncols: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != ncols:
                raise CorruptFile(f"{path}:{lineno}: expected {ncols} tab-separated columns")
            yield lineno, parts


# ---------------------------------------------------------------------------
# training datasets


def export_dataset(dataset, out_dir):
    """Write every image plus ``manifest.tsv``. Returns the manifest path."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    rows = []
    for tc in dataset:
        rel = f"images/{tc.class_id:05d}_o.img"
        write_image(tc.original, os.path.join(out_dir, rel))
        rows.append((rel, tc.class_id, "original", "-"))
        for j, (img, chain) in enumerate(tc.copies):
            rel = f"images/{tc.class_id:05d}_c{j}.img"
            write_image(img, os.path.join(out_dir, rel))
            rows.append((rel, tc.class_id, "copy", format_chain(chain)))
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        for rel, cid, role, chain in rows:
            fh.write(f"{rel}\t{cid}\t{role}\t{chain}\n")
    return manifest


def load_dataset(data_dir) -> list:
    manifest = os.path.join(data_dir, "manifest.tsv")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"{manifest}: no dataset manifest")
    classes: dict[int, TrainingClass] = {}
    for lineno, (rel, cid, role, chain) in _tsv_rows(manifest, 4):
        try:
            cid = int(cid)
            parsed = parse_chain(chain)
        except ValueError as exc:
            raise CorruptFile(f"{manifest}:{lineno}: {exc}") from None
        img = read_image(os.path.join(data_dir, rel))
        tc = classes.setdefault(cid, TrainingClass(cid, None))
        if role == "original":
            if tc.original is not None:
                raise CorruptFile(f"{manifest}:{lineno}: class {cid} has two originals")
            tc.original = img
        elif role == "copy":
            tc.copies.append((img, parsed))
        else:
            raise CorruptFile(f"{manifest}:{lineno}: unknown role {role!r}")
    ids = sorted(classes)
    if ids != list(range(len(ids))):
        raise CorruptFile(f"{manifest}: class ids are not dense 0..K-1")
    for cid in ids:
        if classes[cid].original is None:
            raise CorruptFile(f"{manifest}: class {cid} has no original")
    return [classes[c] for c in ids]


# ---------------------------------------------------------------------------
# videos


def export_video(video: SyntheticVideo, root) -> str:
    vdir = os.path.join(root, video.video_id)
    os.makedirs(vdir, exist_ok=True)
    lines = []
    for t, frame in zip(video.timestamps, video.frames):
        name = f"{int(round(t * 1000))}.img"
        write_image(frame, os.path.join(vdir, name))
        lines.append(f"{float(t)!r}\t{name}\n")
    with open(os.path.join(vdir, "video.tsv"), "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return vdir


def load_video(vdir) -> SyntheticVideo:
    index = os.path.join(vdir, "video.tsv")
    if not os.path.exists(index):
        raise FileNotFoundError(f"{index}: not a video directory")
    ts, frames = [], []
    for lineno, (t, name) in _tsv_rows(index, 2):
        try:
            ts.append(float(t))
        except ValueError:
            raise CorruptFile(f"{index}:{lineno}: bad timestamp {t!r}") from None
        frames.append(read_image(os.path.join(vdir, name)))
    ts = np.asarray(ts, dtype=np.float64)
    if len(ts) > 1 and not np.all(np.diff(ts) > 0):
        raise CorruptFile(f"{index}: timestamps not strictly increasing")
    video_id = os.path.basename(os.path.normpath(vdir))
    arr = np.stack(frames) if frames else np.zeros((0, 0, 0, 3), np.float32)
    return SyntheticVideo(video_id, ts, arr)


def load_video_dir(root) -> list:
    """Every video directory directly under ``root``, sorted by id."""
    if not os.path.isdir(root):
        raise FileNotFoundError(f"{root}: no such directory")
    names = sorted(n for n in os.listdir(root) if os.path.exists(os.path.join(root, n, "video.tsv")))
    return [load_video(os.path.join(root, n)) for n in names]


# ---------------------------------------------------------------------------
# ground truth


def write_gt(segments, path):
    with open(path, "w", encoding="utf-8") as fh:
        for g in segments:
            fh.write(f"{g.query_id}\t{g.ref_id}\t{g.q_start!r}\t{g.q_end!r}\t{g.r_start!r}\t{g.r_end!r}\n")


def read_gt(path) -> list:
    out = []
    for lineno, parts in _tsv_rows(path, 6):
        if parts[0] == "query_id":  # tolerate a header row
            continue
        try:
            qs, qe, rs, re = map(float, parts[2:])
        except ValueError:
            raise CorruptFile(f"{path}:{lineno}: non-numeric interval") from None
        out.append(PlantedSegment(parts[0], parts[1], qs, qe, rs, re))
    return out
