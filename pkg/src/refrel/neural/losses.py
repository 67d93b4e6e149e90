"""Losses returning ``(value, gradient w.r.t. the prediction)``."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError
from ..validation import check_binary


def sigmoid_ce_loss(logits, targets):
    """Mean binary cross-entropy on logits, in the overflow-free form

    ``max(z, 0) - z t + log(1 + exp(-|z|))``.
    """
    z = np.asarray(logits, dtype=np.float64)
    t = check_binary(targets)
    if z.shape != t.shape:
        raise ShapeMismatchError(f"logits {z.shape} and targets {t.shape} differ")
    n = z.size
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    # sigmoid(z) - t, written to stay finite for large |z|
    e = np.exp(-np.abs(z))
    prob = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(loss.sum() / n), (prob - t) / n


def smooth_l1_loss(t_pred, t_gt):
    """Box regression loss ``1/(4N) * sum_i sum_j f(|t_pred[i, j] - t_gt[i, j]|)``.

    ``f(d) = 0.5 d^2`` for ``d < 1`` and ``d - 0.5`` otherwise. Raises
    ``ValueError`` for an empty batch, where the mean is undefined.
    """
    p = np.asarray(t_pred, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(t_gt, dtype=np.float64).reshape(-1, 4)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"prediction {p.shape} and target {g.shape} differ")
    n = p.shape[0]
    if n == 0:
        raise ValueError("smooth L1 loss needs at least one positive pair")
    diff = p - g
    d = np.abs(diff)
    quad = d < 1.0
    per = np.where(quad, 0.5 * d * d, d - 0.5)
    grad = np.where(quad, diff, np.sign(diff)) / (4.0 * n)
    return float(per.sum() / (4.0 * n)), grad
