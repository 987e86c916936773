"""Independent scalar evaluators used to cross-check vectorized code.

Everything here is plain Python float arithmetic over flattened lists.
"""
from __future__ import annotations

import math

import numpy as np

from .losses import DEFAULT_HFL, HflConfig


def _images(pred, target):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    if p.ndim >= 3:
        return [(list(map(float, p[i].ravel())), list(map(float, g[i].ravel()))) for i in range(p.shape[0])]
    return [(list(map(float, p.ravel())), list(map(float, g.ravel())))]


def focal_tversky_scalar(pred, target, cfg: HflConfig = DEFAULT_HFL) -> float:
    vals = []
    for ps, gs in _images(pred, target):
        tp = fp = fn = 0.0
        fp_sum = fn_sum = 0.0
        for p, g in zip(ps, gs):
            tp += p * g
            fp += (p * (1 - g)) ** 2
            fn += ((1 - p) * g) ** 2
            fp_sum += p * (1 - g)
            fn_sum += (1 - p) * g
        if cfg.square_of_sum:
            fp, fn = fp_sum ** 2, fn_sum ** 2
        c = cfg.c_stab
        vals.append(((tp + (1 - cfg.beta) * fp + cfg.beta * fn + c) / (tp + c)) ** cfg.gamma)
    return sum(vals) / len(vals)


def focal_loss_scalar(pred, target, cfg: HflConfig = DEFAULT_HFL) -> float:
    vals = []
    for ps, gs in _images(pred, target):
        total = 0.0
        for p, g in zip(ps, gs):
            p = min(max(p, 1e-7), 1 - 1e-7)
            total += (1 - p) ** cfg.delta * g * math.log(p) + p ** cfg.delta * (1 - g) * math.log(1 - p)
        vals.append(-cfg.omega * total)
    return sum(vals) / len(vals)


def hybrid_focal_scalar(pred, target, cfg: HflConfig = DEFAULT_HFL) -> float:
    return focal_tversky_scalar(pred, target, cfg) + cfg.lam * focal_loss_scalar(pred, target, cfg)


def weighted_cross_entropy_scalar(pred, target, neg_coeff: float = 1.1) -> float:
    total = 0.0
    count = 0
    for ps, gs in _images(pred, target):
        n = len(gs)
        pos = sum(gs)
        for p, g in zip(ps, gs):
            p = min(max(p, 1e-7), 1 - 1e-7)
            if g:
                total -= (n - pos) / n * math.log(p)
            else:
                total -= neg_coeff * pos / n * math.log(1 - p)
            count += 1
    return total / count


def adam_scalar(grads, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, x0=0.0) -> list[float]:
    """Trajectory of one scalar parameter under decoupled-decay Adam, given
    a callable ``grads(x) -> float``."""
    x, m, v = x0, 0.0, 0.0
    out = []
    for t in range(1, 10 ** 9):
        g = grads(x)
        if g is None:
            break
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1 ** t)
        vh = v / (1 - beta2 ** t)
        x = x - lr * weight_decay * x
        x = x - lr * mh / (math.sqrt(vh) + eps)
        out.append(x)
    return out
