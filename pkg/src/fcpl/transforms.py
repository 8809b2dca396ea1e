"""Procedural images, edit transforms, training classes and synthetic videos.

Images are float32 arrays of shape (height, width, 3) with values in [0, 1].
Every function here is a pure function of its arguments and seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import IntervalOutOfBounds

DEFAULT_SIZE = 32

FAMILIES = (
    "HorizontalFlip",
    "Rotate",
    "CropResize",
    "Brightness",
    "Contrast",
    "GaussianBlur",
    "AdditiveNoise",
    "BlockShuffle",
    "Overlay",
)

# name -> (parameter name, allowed values or (lo, hi) range)
_PARAM_RULES = {
    "HorizontalFlip": None,
    "Rotate": ("angle", (90, 180, 270)),
    "CropResize": ("fraction", (0.5, 0.9)),
    "Brightness": ("delta", (-0.3, 0.3)),
    "Contrast": ("factor", (0.5, 1.5)),
    "GaussianBlur": ("sigma", (0.5, 2.0)),
    "AdditiveNoise": ("std", (0.01, 0.1)),
    "BlockShuffle": ("grid", (2, 4)),
    "Overlay": ("area", (0.05, 0.25)),
}
_DISCRETE = {"Rotate", "BlockShuffle"}


@dataclass(frozen=True)
class TransformSpec:
    """One edit from the fixed transform menu, validated at construction."""

    kind: str
    value: float | int | None = None

    def __post_init__(self):
        if self.kind not in _PARAM_RULES:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        rule = _PARAM_RULES[self.kind]
        if rule is None:
            if self.value is not None:
                raise ValueError(f"{self.kind} takes no parameter")
            return
        name, allowed = rule
        if self.value is None:
            raise ValueError(f"{self.kind} requires {name}")
        if self.kind in _DISCRETE:
            if self.value not in allowed:
                raise ValueError(f"{self.kind} {name} must be one of {allowed}")
        else:
            lo, hi = allowed
            # Overlay's lower bound only applies to sampling; any area in (0, 0.25] is valid.
            lo = 0.0 if self.kind == "Overlay" else lo
            ok = lo < self.value <= hi if self.kind == "Overlay" else lo <= self.value <= hi
            if not ok:
                raise ValueError(f"{self.kind} {name}={self.value} outside [{lo}, {hi}]")

    def __str__(self):
        rule = _PARAM_RULES[self.kind]
        if rule is None:
            return self.kind
        return f"{self.kind}({rule[0]}={self.value!r})"

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        text = text.strip()
        if "(" not in text:
            return cls(text)
        kind, rest = text.split("(", 1)
        _, raw = rest.rstrip(")").split("=", 1)
        value = int(raw) if kind in _DISCRETE else float(raw)
        return cls(kind, value)


def format_chain(chain) -> str:
    """``[(spec, seed), ...]`` -> ``"Spec(p=v)@seed;..."``, or ``"-"`` when empty."""
    if not chain:
        return "-"
    return ";".join(f"{spec}@{seed}" for spec, seed in chain)


def parse_chain(text: str) -> list:
    text = text.strip()
    if text in ("", "-"):
        return []
    out = []
    for part in text.split(";"):
        spec, seed = part.rsplit("@", 1)
        out.append((TransformSpec.parse(spec), int(seed)))
    return out


@dataclass
class TrainingClass:
    class_id: int
    original: np.ndarray
    copies: list = field(default_factory=list)  # [(image, chain)]


@dataclass
class SyntheticVideo:
    video_id: str
    timestamps: np.ndarray  # float64 seconds
    frames: np.ndarray  # (T, H, W, 3) float32

    def __len__(self):
        return len(self.timestamps)

    @property
    def fps(self) -> float:
        if len(self.timestamps) < 2:
            return 1.0
        return 1.0 / float(self.timestamps[1] - self.timestamps[0])


@dataclass(frozen=True)
class PlantedSegment:
    """Query interval [q_start, q_end] copied from reference interval [r_start, r_end]."""

    query_id: str
    ref_id: str
    q_start: float
    q_end: float
    r_start: float
    r_end: float


# ---------------------------------------------------------------------------
# originals


def synthesize_original(seed: int, index: int, size: int = DEFAULT_SIZE, stream: int = 0) -> np.ndarray:
    """Render a gradient background with a handful of random coloured shapes.

    ``stream`` separates independent image families drawn from the same seed
    (training originals use 0, video frames use other streams).
    """
    rng = np.random.default_rng([int(seed), int(index), int(stream)])
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)

    theta = rng.uniform(0, 2 * np.pi)
    t = (np.cos(theta) * xx + np.sin(theta) * yy)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    img = (1 - t)[..., None] * c0 + t[..., None] * c1

    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0, 1, 3)
        kind = rng.integers(0, 3)
        cx, cy = rng.uniform(0, 1, 2)
        rx, ry = rng.uniform(0.08, 0.3, 2)
        if kind == 0:
            mask = (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)
        elif kind == 1:
            mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        else:
            # triangle as intersection of three half-planes around (cx, cy)
            a0 = rng.uniform(0, 2 * np.pi)
            pts = [(cx + rx * 1.5 * np.cos(a0 + k * 2 * np.pi / 3),
                    cy + ry * 1.5 * np.sin(a0 + k * 2 * np.pi / 3)) for k in range(3)]
            mask = np.ones((h, w), dtype=bool)
            for k in range(3):
                (x0, y0), (x1, y1) = pts[k], pts[(k + 1) % 3]
                side = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
                ref = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)
                mask &= side * np.sign(ref) >= 0
        img[mask] = color
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# transforms


def _resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    sh, sw = img.shape[:2]
    ys = np.linspace(0, sh - 1, h)
    xs = np.linspace(0, sw - 1, w)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    out = np.empty((h, w, img.shape[2]), dtype=np.float64)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.map_coordinates(img[..., c], [gy, gx], order=1, mode="nearest")
    return out


def apply_transform(img: np.ndarray, spec: TransformSpec, rng_seed: int) -> np.ndarray:
    """Apply one edit; output has the input's shape and stays in [0, 1]."""
    rng = np.random.default_rng(int(rng_seed) & 0xFFFFFFFFFFFF)
    h, w = img.shape[:2]
    kind, v = spec.kind, spec.value

    if kind == "HorizontalFlip":
        return img[:, ::-1].copy()
    if kind == "Rotate":
        out = np.rot90(img, k=int(v) // 90)
        if out.shape[:2] != (h, w):
            out = _resize(out, h, w).astype(img.dtype)
        return np.ascontiguousarray(out)
    if kind == "BlockShuffle":
        g = int(v)
        bh, bw = h // g, w // g
        out = img.copy()
        if bh == 0 or bw == 0:
            return out
        blocks = [img[i * bh:(i + 1) * bh, j * bw:(j + 1) * bw] for i in range(g) for j in range(g)]
        perm = rng.permutation(len(blocks))
        for dst, src in enumerate(perm):
            i, j = divmod(dst, g)
            out[i * bh:(i + 1) * bh, j * bw:(j + 1) * bw] = blocks[src]
        return out

    x = img.astype(np.float64)
    if kind == "CropResize":
        ch, cw = max(1, round(h * v)), max(1, round(w * v))
        y0 = rng.integers(0, h - ch + 1)
        x0 = rng.integers(0, w - cw + 1)
        out = _resize(x[y0:y0 + ch, x0:x0 + cw], h, w)
    elif kind == "Brightness":
        out = x + v
    elif kind == "Contrast":
        mean = x.mean()
        out = (x - mean) * v + mean
    elif kind == "GaussianBlur":
        out = ndimage.gaussian_filter(x, sigma=(v, v, 0), mode="reflect")
    elif kind == "AdditiveNoise":
        out = x + rng.normal(0.0, v, size=x.shape)
    elif kind == "Overlay":
        aspect = rng.uniform(0.5, 2.0)
        rh = min(h, max(1, int(math.floor(math.sqrt(v * h * w * aspect)))))
        rw = min(w, max(1, int(math.floor(v * h * w / rh))))
        y0 = rng.integers(0, h - rh + 1)
        x0 = rng.integers(0, w - rw + 1)
        out = x.copy()
        out[y0:y0 + rh, x0:x0 + rw] = rng.uniform(0, 1, 3)
    else:  # pragma: no cover - guarded by TransformSpec
        raise ValueError(kind)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def apply_chain(img: np.ndarray, chain) -> np.ndarray:
    for spec, seed in chain:
        img = apply_transform(img, spec, seed)
    return img


def sample_transform(rng: np.random.Generator, kind: str) -> TransformSpec:
    rule = _PARAM_RULES[kind]
    if rule is None:
        return TransformSpec(kind)
    _, allowed = rule
    if kind in _DISCRETE:
        return TransformSpec(kind, int(rng.choice(allowed)))
    lo, hi = allowed
    return TransformSpec(kind, float(rng.uniform(lo, hi)))


def sample_chain(rng: np.random.Generator, length: int, families=FAMILIES) -> list:
    """Pick ``length`` distinct families (fewer if the menu is smaller) with random parameters."""
    families = list(families)
    n = min(length, len(families))
    kinds = [families[i] for i in rng.choice(len(families), size=n, replace=False)]
    return [(sample_transform(rng, k), int(rng.integers(0, 2**31 - 1))) for k in kinds]


# ---------------------------------------------------------------------------
# training classes


def generate_class(class_id: int, original: np.ndarray, copies_per_class: int,
                   chain_len_range=(1, 3), seed: int = 0, families=FAMILIES) -> TrainingClass:
    if copies_per_class < 1:
        raise ValueError("copies_per_class must be >= 1")
    lo, hi = chain_len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad chain_len_range {chain_len_range}")
    rng = np.random.default_rng([int(seed), int(class_id), 0xC1A55])
    copies = []
    for _ in range(copies_per_class):
        chain = sample_chain(rng, int(rng.integers(lo, hi + 1)), families)
        copies.append((apply_chain(original, chain), chain))
    return TrainingClass(class_id, original, copies)


def build_dataset(num_classes: int, copies_per_class: int, seed: int,
                  chain_len_range=(1, 3), families=FAMILIES, size: int = DEFAULT_SIZE) -> list:
    return [
        generate_class(k, synthesize_original(seed, k, size), copies_per_class,
                       chain_len_range, seed, families)
        for k in range(num_classes)
    ]


def dataset_arrays(dataset):
    """Flatten a dataset to (images, labels, is_original) arrays in class order."""
    images, labels, is_orig = [], [], []
    for tc in dataset:
        images.append(tc.original)
        labels.append(tc.class_id)
        is_orig.append(True)
        for img, _ in tc.copies:
            images.append(img)
            labels.append(tc.class_id)
            is_orig.append(False)
    return np.stack(images), np.asarray(labels, dtype=np.int64), np.asarray(is_orig)


# ---------------------------------------------------------------------------
# videos


def _n_frames(length_s: float, fps: float) -> int:
    return int(round(length_s * fps))


def render_video(video_id: str, length_s: float, fps: float, seed: int, stream: int = 1,
                 size: int = DEFAULT_SIZE) -> SyntheticVideo:
    """A video of unrelated synthesized frames at uniform ``fps``."""
    n = _n_frames(length_s, fps)
    ts = np.arange(n, dtype=np.float64) / fps
    frames = np.stack([synthesize_original(seed, i, size, stream) for i in range(n)]) if n else \
        np.zeros((0, size, size, 3), np.float32)
    return SyntheticVideo(video_id, ts, frames)


def _frame_index(ts: np.ndarray, t: float) -> int:
    return int(np.argmin(np.abs(ts - t)))


def plant_segments(ref: SyntheticVideo, query: SyntheticVideo, intervals, chain) -> list:
    """Overwrite query frames inside each q-interval with edited reference frames.

    ``intervals`` holds ((q_start, q_end), (r_start, r_end)) tuples of equal length.
    Returns the ground-truth :class:`PlantedSegment` list.
    """
    gts = []
    for (qs, qe), (rs, re) in intervals:
        if qe < qs or re < rs:
            raise IntervalOutOfBounds(f"empty interval q=[{qs},{qe}] r=[{rs},{re}]")
        if abs((qe - qs) - (re - rs)) > 1.0 / query.fps + 1e-9:
            raise IntervalOutOfBounds("query and reference intervals differ in length")
        if len(query) == 0 or len(ref) == 0 or qs < query.timestamps[0] - 1e-9 \
                or qe > query.timestamps[-1] + 1e-9 or rs < ref.timestamps[0] - 1e-9 \
                or re > ref.timestamps[-1] + 1e-9:
            raise IntervalOutOfBounds(f"interval q=[{qs},{qe}] r=[{rs},{re}] outside video bounds")
        for qi, t in enumerate(query.timestamps):
            if qs - 1e-9 <= t <= qe + 1e-9:
                ri = _frame_index(ref.timestamps, rs + (t - qs))
                query.frames[qi] = apply_chain(ref.frames[ri], chain)
        gts.append(PlantedSegment(query.video_id, ref.video_id, float(qs), float(qe), float(rs), float(re)))
    return gts


def render_video_pair(ref_len_s: float, query_len_s: float, copied_interval, fps: float = 1.0,
                      transform_chain=(), seed: int = 0, ref_id: str | None = None,
                      query_id: str | None = None, size: int = DEFAULT_SIZE):
    """Render a reference and a query that copies one reference interval.

    ``copied_interval`` is ((q_start, q_end), (r_start, r_end)); a list of such
    tuples plants several segments. Returns (ref, query, ground truth), where
    ground truth is a single PlantedSegment or a list for multiple intervals.
    """
    ref_id = ref_id or f"R{seed}"
    query_id = query_id or f"Q{seed}"
    ref = render_video(ref_id, ref_len_s, fps, seed, stream=1, size=size)
    query = render_video(query_id, query_len_s, fps, seed, stream=2, size=size)
    multi = isinstance(copied_interval, list)
    intervals = copied_interval if multi else [copied_interval]
    gts = plant_segments(ref, query, intervals, list(transform_chain))
    return ref, query, (gts if multi else gts[0])
