"""Loss terms and their analytic gradients.

All terms act on raw (unnormalized) embeddings and normalize internally, so
gradients are returned with respect to the raw embeddings.

* ``cosface_loss``  - large-margin cosine classification loss (metric term)
* ``compat_loss``   - sum_i || unit(base_i) - unit(new_i) ||, base held fixed
* ``pos_loss``      - sum_i || unit(a_i) - unit(b_i) ||
* ``neg_loss``      - 1/2 sum_i ( ||unit(p1_i)-unit(n1_i)|| + ||unit(p2_i)-unit(n2_i)|| )

Distances are plain (unsquared) L2 norms; the gradient of ||d|| at d = 0 is 0.
Each pairwise term takes ``mean=True`` to divide by the number of pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateNorm, NoNegativeAvailable
from .net import NORM_FLOOR


def _unit_rows(V: np.ndarray):
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    n = np.linalg.norm(V, axis=1, keepdims=True)
    if np.any(n <= NORM_FLOOR):
        raise DegenerateNorm(f"embedding norm {float(n.min()):.3g} <= {NORM_FLOOR}")
    return V / n, n


def _unit_backward(U: np.ndarray, norms: np.ndarray, dU: np.ndarray) -> np.ndarray:
    """Pull a gradient on unit(V) back to V: (dU - U <U, dU>) / ||V||."""
    return (dU - U * np.sum(U * dU, axis=1, keepdims=True)) / norms


@dataclass
class ClassifierHead:
    W: np.ndarray  # (num_classes, embed_dim)
    s: float = 30.0
    m: float = 0.35

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("cosface scale s must be positive")
        if not 0 <= self.m < 1:
            raise ValueError("cosface margin m must be in [0, 1)")

    @classmethod
    def init(cls, num_classes: int, embed_dim: int, seed: int, s: float = 30.0, m: float = 0.35):
        rng = np.random.default_rng([int(seed), 0x4EAD])
        W = rng.normal(0.0, 1.0, (num_classes, embed_dim))
        return cls(W / np.linalg.norm(W, axis=1, keepdims=True), s, m)

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(self.W.copy(), self.s, self.m)


def cosine_logits(E, head: ClassifierHead) -> np.ndarray:
    U, _ = _unit_rows(E)
    Wn, _ = _unit_rows(head.W)
    return U @ Wn.T


def cosface_loss(E, labels, head: ClassifierHead):
    """Mean large-margin cosine loss over the batch.

    Returns (loss, dE, dW).
    """
    labels = np.asarray(labels, dtype=np.int64)
    U, en = _unit_rows(E)
    if len(U) == 0:
        raise ValueError("empty batch")
    if labels.shape != (len(U),) or labels.min() < 0 or labels.max() >= len(head.W):
        raise ValueError("labels out of range")
    Wn, wn = _unit_rows(head.W)
    B = len(U)
    rows = np.arange(B)
    cos = U @ Wn.T
    logits = head.s * cos
    logits[rows, labels] -= head.s * head.m
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[rows, labels]))

    P = np.exp(logits - lse[:, None])
    P[rows, labels] -= 1.0
    dcos = head.s * P / B
    dU = dcos @ Wn
    dWn = dcos.T @ U
    return loss, _unit_backward(U, en, dU), _unit_backward(Wn, wn, dWn)


def _pair_dist(A, B):
    """Per-row ||unit(A)-unit(B)|| and gradients of their sum w.r.t. A and B."""
    UA, na = _unit_rows(A)
    UB, nb = _unit_rows(B)
    D = UA - UB
    dist = np.linalg.norm(D, axis=1)
    safe = np.where(dist > 0.0, dist, 1.0)
    G = np.where((dist > 0.0)[:, None], D / safe[:, None], 0.0)
    return dist, _unit_backward(UA, na, G), _unit_backward(UB, nb, -G)


def compat_loss(base_feats, new_feats, mean: bool = False):
    """Returns (loss, grad w.r.t. new_feats). Base features are constants."""
    base = np.atleast_2d(np.asarray(base_feats, dtype=np.float64))
    new = np.atleast_2d(np.asarray(new_feats, dtype=np.float64))
    if base.shape != new.shape:
        raise ValueError(f"base {base.shape} and new {new.shape} differ")
    if len(new) == 0:
        return 0.0, np.zeros_like(new)
    dist, _, dnew = _pair_dist(base, new)
    k = 1.0 / len(dist) if mean else 1.0
    return float(dist.sum() * k), dnew * k


def pos_loss(A, B, mean: bool = False):
    """Returns (loss, dA, dB) for positive pairs (A_i, B_i)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape != B.shape or len(A) == 0:
        raise ValueError("pos_loss needs a non-empty list of equal-shape pairs")
    dist, dA, dB = _pair_dist(A, B)
    k = 1.0 / len(dist) if mean else 1.0
    return float(dist.sum() * k), dA * k, dB * k


def neg_loss(P1, N1, P2, N2, mean: bool = False):
    """Returns (loss, dP1, dN1, dP2, dN2)."""
    arrs = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (P1, N1, P2, N2)]
    if len({a.shape for a in arrs}) != 1 or len(arrs[0]) == 0:
        raise ValueError("neg_loss needs four equal-shape non-empty batches")
    d1, dP1, dN1 = _pair_dist(arrs[0], arrs[1])
    d2, dP2, dN2 = _pair_dist(arrs[2], arrs[3])
    k = 0.5 / len(d1) if mean else 0.5
    return float((d1.sum() + d2.sum()) * k), dP1 * k, dN1 * k, dP2 * k, dN2 * k


# ---------------------------------------------------------------------------
# hardest negative mining


def hardest_negative(anchor, candidates, candidate_classes, anchor_class) -> int:
    """Index of the most cosine-similar candidate whose class differs from the anchor's.

    Ties go to the lowest index.
    """
    classes = np.asarray(candidate_classes)
    allowed = classes != anchor_class
    if not np.any(allowed):
        raise NoNegativeAvailable("every candidate shares the anchor class")
    a, _ = _unit_rows(anchor)
    C, _ = _unit_rows(candidates)
    sims = (C @ a[0]).copy()
    sims[~allowed] = -np.inf
    return int(np.argmax(sims))


def mine_hardest_negatives(E, groups, anchors) -> np.ndarray:
    """Batch form: for each anchor row index, the hardest negative row in ``E``.

    ``groups`` assigns each row a class/pair id; rows sharing the anchor's
    group are never chosen.
    """
    U, _ = _unit_rows(E)
    groups = np.asarray(groups)
    anchors = np.asarray(anchors, dtype=np.int64)
    sims = U[anchors] @ U.T
    same = groups[anchors][:, None] == groups[None, :]
    if np.any(same.all(axis=1)):
        raise NoNegativeAvailable("an anchor has no candidate from another group")
    sims[same] = -np.inf
    return np.argmax(sims, axis=1)


# ---------------------------------------------------------------------------
# combined objectives


def combine_stage2(l_mtr: float, l_com: float, lambda_r: float) -> float:
    return l_mtr + lambda_r * l_com


def combine_stage3(l_mtr: float, l_com: float, l_pos: float, l_neg: float,
                   lambda_r: float, lambda_pn: float) -> float:
    # with lambda_pn == 0 this must reduce exactly to combine_stage2
    out = combine_stage2(l_mtr, l_com, lambda_r)
    if lambda_pn != 0.0:
        out = out + lambda_pn * (l_pos - l_neg)
    return out


@dataclass
class LossBreakdown:
    l_mtr: float = 0.0
    l_com: float = 0.0
    l_pos: float = 0.0
    l_neg: float = 0.0
    lambda_r: float = 1.0
    lambda_pn: float = 0.0
    stage: int = 2

    @property
    def l_final(self) -> float:
        if self.stage == 3:
            return combine_stage3(self.l_mtr, self.l_com, self.l_pos, self.l_neg, self.lambda_r, self.lambda_pn)
        return combine_stage2(self.l_mtr, self.l_com, self.lambda_r)

    def terms(self) -> tuple:
        return (self.l_mtr, self.l_com, self.l_pos, self.l_neg, self.l_final)
