"""Finite-difference checks of every loss term on small random fixtures.

Embedding-level terms use a batch of 4 embeddings of dimension 8; the
combined objectives run through a tiny network so the check covers the
backward pass as well.
"""

from __future__ import annotations

import numpy as np

from . import losses as L
from .net import NetworkParams, grad_check, init_params
from .trainer import Batch, batch_objective

BATCH = 4
DIM = 8


def _closure_mtr(labels, s, m):
    def f(p):
        head = L.ClassifierHead(p["W"], s, m)
        loss, dE, dW = L.cosface_loss(p["E"], labels, head)
        return loss, {"E": dE, "W": dW}
    return f


def _net_closure(batch, head, lambda_r, lambda_pn, stage):
    def f(params: NetworkParams):
        br, g, _ = batch_objective(params, head, batch, lambda_r, lambda_pn, stage)
        return br.l_final, g
    return f


def tiny_stage3_fixture(seed: int = 0, input_dim: int = 12, hidden_dim: int = 10):
    """(params, head, batch) with 4 class images (2 originals) and 2 GT pairs."""
    rng = np.random.default_rng([seed, 0x6C])
    params = init_params(seed, input_dim, hidden_dim, DIM)
    params.b1 += rng.normal(0, 0.1, hidden_dim)  # keep pre-activations off exactly 0
    head = L.ClassifierHead.init(3, DIM, seed)
    X = rng.normal(0, 1, (BATCH + 4, input_dim))
    labels = np.array([0, 1, 2, 0])
    orig = np.array([0, 1])
    base = rng.normal(0, 1, (2, DIM))
    return params, head, Batch(X, labels, orig, base, n_pairs=2)


def loss_gradient_errors(seed: int = 0, eps: float = 1e-4) -> dict:
    """Max relative gradient error per term."""
    rng = np.random.default_rng([seed, 0x6C, 1])
    E = lambda: rng.normal(0, 1, (BATCH, DIM))  # noqa: E731
    out = {}

    labels = np.array([0, 1, 2, 1])
    p = {"E": E(), "W": rng.normal(0, 1, (3, DIM))}
    out["l_mtr"] = grad_check(p, _closure_mtr(labels, 30.0, 0.35), eps, seed=seed)

    base = E()

    def com(p):
        loss, dN = L.compat_loss(base, p["N"])
        return loss, {"N": dN}
    out["l_com"] = grad_check({"N": E()}, com, eps, seed=seed)

    def pos(p):
        loss, dA, dB = L.pos_loss(p["A"], p["B"])
        return loss, {"A": dA, "B": dB}
    out["l_pos"] = grad_check({"A": E(), "B": E()}, pos, eps, seed=seed)

    def neg(p):
        loss, *g = L.neg_loss(p["P1"], p["N1"], p["P2"], p["N2"])
        return loss, dict(zip(("P1", "N1", "P2", "N2"), g))
    out["l_neg"] = grad_check({k: E() for k in ("P1", "N1", "P2", "N2")}, neg, eps, seed=seed)

    params, head, batch = tiny_stage3_fixture(seed)
    cls_only = Batch(batch.X[:BATCH], batch.labels, batch.orig_rows, batch.base_feats, 0)
    out["stage2"] = grad_check(params, _net_closure(cls_only, head, 1.0, 0.0, 2), eps, seed=seed)
    out["stage3"] = grad_check(params, _net_closure(batch, head, 1.0, 0.5, 3), eps, seed=seed)
    return out
