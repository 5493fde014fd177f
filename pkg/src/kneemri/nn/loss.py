"""Class-weighted binary cross-entropy in the numerically stable logit form."""

import numpy as np


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def weighted_bce(logits, labels, weights):
    """Per-example weighted BCE and its gradient w.r.t. the logit.

    loss = -w * [y*ln(p) + (1-y)*ln(1-p)] with p = sigmoid(logit),
    evaluated as w * (softplus(z) - y*z) so extreme logits stay finite.
    Returns (loss, dloss/dlogit), elementwise over broadcast inputs.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    loss = w * (_softplus(z) - y * z)
    grad = w * (sigmoid(z) - y)
    return loss, grad
