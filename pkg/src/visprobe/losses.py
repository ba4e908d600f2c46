"""Training objectives. Each returns ``(loss, gradient)``.

``infonce`` takes the B x B score matrix ``S[i, j] = <v_hat_i, v_j>`` and
returns dL/dS; the others take the predicted and target batches and return
dL/dv_hat. :func:`loss_and_grad` gives a uniform (v_hat, v) entry point.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

TRIPLET_MARGIN = 1.0
NORM_FLOOR = 1e-12
LOSSES = ("infonce", "mse", "neg_cosine", "triplet")
CONTRASTIVE = frozenset({"infonce", "triplet"})


def infonce(scores):
    """Mean over rows of -log softmax(row)[i] at the aligned column."""
    S = np.asarray(scores)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"score matrix must be square, got shape {S.shape}")
    B = S.shape[0]
    if B < 2:
        raise ConfigError("InfoNCE needs a batch of at least 2 (one distractor per row)")
    shifted = S - S.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - lse
    loss = -np.trace(log_p) / B
    grad = np.exp(log_p)
    grad[np.diag_indices(B)] -= 1.0
    grad /= B
    return float(loss), grad


def _check_pair(v_hat, v):
    v_hat = np.asarray(v_hat)
    v = np.asarray(v)
    if v_hat.shape != v.shape or v_hat.ndim != 2:
        raise ShapeError(f"prediction shape {v_hat.shape} does not match target shape {v.shape}")
    return v_hat, v


def mse(v_hat, v):
    """Mean squared error over batch and feature dimensions."""
    v_hat, v = _check_pair(v_hat, v)
    diff = v_hat - v
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _norms(x, what):
    n = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(n < NORM_FLOOR)
    if bad.size:
        raise NumericError(f"zero-norm {what} vector(s) at batch rows {bad.tolist()}")
    return n


def neg_cosine(v_hat, v):
    """Mean over the batch of -cos(v_hat_i, v_i)."""
    v_hat, v = _check_pair(v_hat, v)
    B = v_hat.shape[0]
    a = _norms(v_hat, "predicted")[:, None]
    b = _norms(v, "target")[:, None]
    cos = np.sum(v_hat * v, axis=1, keepdims=True) / (a * b)
    grad = -(v / (a * b) - cos * v_hat / (a * a)) / B
    return float(-cos.mean()), grad


def triplet(v_hat, v, margin=TRIPLET_MARGIN):
    """Cosine hinge against every other in-batch target, averaged.

    For each row i and each j != i: max(cos(v_hat_i, v_j) - cos(v_hat_i, v_i) + margin, 0).
    """
    v_hat, v = _check_pair(v_hat, v)
    B = v_hat.shape[0]
    if B < 2:
        raise ConfigError("triplet loss needs at least one in-batch negative per row")
    a = _norms(v_hat, "predicted")
    b = _norms(v, "target")
    u = v_hat / a[:, None]
    w = v / b[:, None]
    C = u @ w.T  # C[i, j] = cos(v_hat_i, v_j)
    pos = np.diag(C)
    H = C - pos[:, None] + margin
    off = ~np.eye(B, dtype=bool)
    active = (H > 0) & off
    n_terms = B * (B - 1)
    loss = float(np.where(active, H, 0.0).sum() / n_terms)
    # dL/dC: +1 on active negatives, minus their count on the diagonal
    dC = active.astype(v_hat.dtype)
    dC[np.diag_indices(B)] = -active.sum(axis=1)
    dC /= n_terms
    # d cos(v_hat_i, v_j) / d v_hat_i = (w_j - C_ij u_i) / |v_hat_i|
    grad = (dC @ w - (dC * C).sum(axis=1, keepdims=True) * u) / a[:, None]
    return loss, grad


def loss_and_grad(name, v_hat, v):
    """Loss value and dL/dv_hat for any of the four objectives."""
    if name == "infonce":
        v_hat, v = _check_pair(v_hat, v)
        loss, dS = infonce(v_hat @ v.T)
        return loss, dS @ v
    if name == "mse":
        return mse(v_hat, v)
    if name == "neg_cosine":
        return neg_cosine(v_hat, v)
    if name == "triplet":
        return triplet(v_hat, v)
    raise ConfigError(f"unknown loss {name!r}; choose from {', '.join(LOSSES)}")
