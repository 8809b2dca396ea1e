"""Two-layer MLP embedding network with hand-written gradients.

    embedding = W2 @ relu(W1 @ flatten(img) + b1) + b2

where ``flatten`` lays the image out row-major and centres it (pixel - 0.5).

Parameters live in float64. The batched functions (``forward_batch``,
``backward_batch``) are what the trainer uses; ``forward``/``backward`` are
the single-image forms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFile, DegenerateNorm, DimensionMismatch

NORM_FLOOR = 1e-12
PIXEL_OFFSET = 0.5
CKPT_MAGIC = b"FCPL"
CKPT_VERSION = 1

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class NetworkParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "NetworkParams":
        return NetworkParams(*(getattr(self, n).copy() for n in PARAM_NAMES))

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(*(np.zeros_like(getattr(self, n)) for n in PARAM_NAMES))

    def validate(self):
        h, d = self.W1.shape
        e, h2 = self.W2.shape
        if self.b1.shape != (h,) or h2 != h or self.b2.shape != (e,):
            raise DimensionMismatch("inconsistent parameter shapes")
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")


ParamGrads = NetworkParams


def init_params(seed: int, input_dim: int = 3072, hidden_dim: int = 128, embed_dim: int = 32) -> NetworkParams:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    if min(input_dim, hidden_dim, embed_dim) <= 0:
        raise ValueError("dims must be positive")
    rng = np.random.default_rng([int(seed), 0x1217])
    return NetworkParams(
        W1=rng.normal(0.0, 1.0 / np.sqrt(input_dim), (hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        W2=rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (embed_dim, hidden_dim)),
        b2=np.zeros(embed_dim),
    )


def flatten(images) -> np.ndarray:
    """(H, W, C) -> (H*W*C,) or (B, H, W, C) -> (B, H*W*C), float64, row-major.

    Pixels are shifted by -PIXEL_OFFSET so network inputs are zero-centred;
    with raw [0, 1] inputs every embedding starts out pointing the same way
    and the cosine losses barely train.
    """
    x = np.asarray(images, dtype=np.float64) - PIXEL_OFFSET
    if x.ndim == 3:
        return x.reshape(-1)
    return x.reshape(x.shape[0], -1)


def _check_input(params: NetworkParams, X: np.ndarray):
    if X.shape[-1] != params.input_dim:
        raise DimensionMismatch(f"input has {X.shape[-1]} values, network expects {params.input_dim}")


def forward_batch(params: NetworkParams, X: np.ndarray, return_hidden: bool = False):
    """Embed a (B, input_dim) batch. With ``return_hidden`` also return the pre-activations."""
    _check_input(params, X)
    Z = X @ params.W1.T + params.b1
    H = np.maximum(Z, 0.0)
    E = H @ params.W2.T + params.b2
    if return_hidden:
        return E, Z
    return E


def backward_batch(params: NetworkParams, X: np.ndarray, dE: np.ndarray, Z: np.ndarray | None = None) -> NetworkParams:
    """Gradient of sum_b <E_b, dE_b> with respect to every parameter."""
    _check_input(params, X)
    if dE.shape != (X.shape[0], params.embed_dim):
        raise DimensionMismatch(f"upstream grad shape {dE.shape} != {(X.shape[0], params.embed_dim)}")
    if Z is None:
        Z = X @ params.W1.T + params.b1
    H = np.maximum(Z, 0.0)
    dH = dE @ params.W2
    dZ = dH * (Z > 0.0)  # subgradient 0 at exactly 0
    return NetworkParams(W1=dZ.T @ X, b1=dZ.sum(axis=0), W2=dE.T @ H, b2=dE.sum(axis=0))


def forward(params: NetworkParams, img) -> np.ndarray:
    x = flatten(img)
    if x.ndim != 1:
        raise DimensionMismatch("forward takes a single image; use forward_batch")
    return forward_batch(params, x[None, :])[0]


def backward(params: NetworkParams, img, upstream_grad) -> NetworkParams:
    x = flatten(img)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != (params.embed_dim,):
        raise DimensionMismatch(f"upstream grad must have shape ({params.embed_dim},)")
    return backward_batch(params, x[None, :], g[None, :])


def l2_normalize(v) -> np.ndarray:
    """Unit-L2 vector(s). Works on a vector or row-wise on a matrix."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n <= NORM_FLOOR):
        raise DegenerateNorm(f"norm {float(n.min()):.3g} <= {NORM_FLOOR}")
    return v / n


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(params, loss_closure, eps: float = 1e-4, num_coords: int = 200, seed: int = 0,
               skip_below: float = 1e-8) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``params`` is a NetworkParams or a mapping of name -> ndarray; arrays are
    perturbed in place and restored. ``loss_closure(params)`` must return
    ``(loss, grads)`` with grads keyed like ``params``. Coordinates where both
    gradients are below ``skip_below`` in magnitude are skipped.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    arrays = params.arrays() if hasattr(params, "arrays") else dict(params)
    _, grads = loss_closure(params)
    grads = grads.arrays() if hasattr(grads, "arrays") else dict(grads)

    coords = [(name, i) for name in sorted(arrays) for i in range(arrays[name].size)]
    rng = np.random.default_rng(seed)
    if len(coords) > num_coords:
        pick = rng.choice(len(coords), size=num_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst = 0.0
    for name, i in coords:
        flat = arrays[name].reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        lp = loss_closure(params)[0]
        flat[i] = old - eps
        lm = loss_closure(params)[0]
        flat[i] = old
        num = (lp - lm) / (2 * eps)
        ana = float(np.asarray(grads[name]).reshape(-1)[i])
        if abs(num) < skip_below and abs(ana) < skip_below:
            continue
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana)))
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: NetworkParams, path):
    params.validate()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IIII", CKPT_VERSION, params.input_dim, params.hidden_dim, params.embed_dim))
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f4").tobytes())


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 20 or data[:4] != CKPT_MAGIC:
        raise CorruptFile(f"{path}: not an FCPL checkpoint")
    version, d, h, e = struct.unpack_from("<IIII", data, 4)
    if version != CKPT_VERSION:
        raise CorruptFile(f"{path}: unsupported checkpoint version {version}")
    shapes = [(h, d), (h,), (e, h), (e,)]
    need = 20 + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != need:
        raise CorruptFile(f"{path}: expected {need} bytes, found {len(data)}")
    off, arrays = 20, []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shape))
        off += 4 * n
    return NetworkParams(*arrays)
