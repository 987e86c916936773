"""Hybrid focal loss (focal Tversky + focal loss) and weighted cross-entropy.

Inputs are N,1,H,W (or any shape whose leading axis is the batch when
ndim >= 3; 2-D inputs count as a single image). Image-level terms are
computed per image and averaged over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor

PRED_SLACK = 1e-6
LOG_CLAMP = 1e-7


@dataclass(frozen=True)
class HflConfig:
    lam: float = 0.001
    beta: float = 0.7
    gamma: float = 0.75
    omega: float = 0.25
    delta: float = 2.0
    c_stab: float = 1e-7
    square_of_sum: bool = False

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.c_stab <= 0:
            raise ValueError(f"c_stab must be positive, got {self.c_stab}")
        if self.omega < 0 or self.delta < 0:
            raise ValueError("omega and delta must be non-negative")


DEFAULT_HFL = HflConfig()


def _operands(pred, target) -> tuple[Tensor, Tensor]:
    p = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred, dtype=np.float32))
    t = np.asarray(target.data if isinstance(target, Tensor) else target)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} differs from target shape {t.shape}")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("target must be binary (0/1)")
    if p.size and (p.data.min() < -PRED_SLACK or p.data.max() > 1.0 + PRED_SLACK):
        raise ValueError("prediction values must lie in [0, 1]")
    return p, Tensor(t.astype(p.dtype))


def _image_axes(t: Tensor) -> tuple[int, ...]:
    return tuple(range(1, t.ndim)) if t.ndim >= 3 else tuple(range(t.ndim))


def _batch_mean(per_image: Tensor) -> Tensor:
    return ops.mean(per_image) if per_image.ndim else per_image


def focal_tversky(pred, target, cfg: HflConfig = DEFAULT_HFL) -> Tensor:
    """``((TP + (1-b) FP2 + b FN2 + C) / (TP + C)) ** gamma``, batch-averaged.

    FP2 and FN2 square each pixel's term before summing; with
    ``cfg.square_of_sum`` they square the summed totals instead.
    """
    p, g = _operands(pred, target)
    axes = _image_axes(p)
    one_minus_p = ops.sub(1.0, p)
    one_minus_g = ops.sub(1.0, g)
    tp = ops.sum(ops.mul(p, g), axis=axes)
    fp_el = ops.mul(p, one_minus_g)
    fn_el = ops.mul(one_minus_p, g)
    if cfg.square_of_sum:
        fp = ops.power(ops.sum(fp_el, axis=axes), 2.0)
        fn = ops.power(ops.sum(fn_el, axis=axes), 2.0)
    else:
        fp = ops.sum(ops.mul(fp_el, fp_el), axis=axes)
        fn = ops.sum(ops.mul(fn_el, fn_el), axis=axes)
    denom = ops.add(tp, cfg.c_stab)
    numer = ops.add(ops.add(ops.add(tp, ops.scale(fp, 1.0 - cfg.beta)), ops.scale(fn, cfg.beta)), cfg.c_stab)
    return _batch_mean(ops.power(ops.div(numer, denom), cfg.gamma))


def focal_loss(pred, target, cfg: HflConfig = DEFAULT_HFL) -> Tensor:
    """``-omega * sum[(1-p)^d g log p + p^d (1-g) log(1-p)]`` per image, batch-averaged."""
    p, g = _operands(pred, target)
    axes = _image_axes(p)
    pc = ops.clamp(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    one_minus = ops.sub(1.0, pc)
    pos = ops.mul(ops.mul(ops.power(one_minus, cfg.delta), g), ops.log(pc))
    neg = ops.mul(ops.mul(ops.power(pc, cfg.delta), ops.sub(1.0, g)), ops.log(one_minus))
    per_image = ops.sum(ops.add(pos, neg), axis=axes)
    return _batch_mean(ops.scale(per_image, -cfg.omega))


def hybrid_focal(pred, target, cfg: HflConfig = DEFAULT_HFL) -> Tensor:
    """Focal Tversky plus ``lam`` times focal loss."""
    ft = focal_tversky(pred, target, cfg)
    if cfg.lam == 0.0:
        return ft
    return ops.add(ft, ops.scale(focal_loss(pred, target, cfg), cfg.lam))


def weighted_cross_entropy(pred, target, neg_coeff: float = 1.1) -> Tensor:
    """Class-balanced BCE, mean over pixels.

    Per image, positives weigh ``|neg|/|all|`` and negatives
    ``neg_coeff * |pos|/|all|``.
    """
    p, g = _operands(pred, target)
    axes = _image_axes(p)
    gd = g.data
    n_all = np.prod([gd.shape[a] for a in axes]) if axes else 1
    pos_frac = np.sum(gd, axis=axes, keepdims=True) / n_all
    w_pos = 1.0 - pos_frac
    w_neg = neg_coeff * pos_frac
    weights = Tensor((gd * w_pos + (1.0 - gd) * w_neg).astype(p.dtype))
    pc = ops.clamp(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    ll = ops.add(ops.mul(g, ops.log(pc)), ops.mul(ops.sub(1.0, g), ops.log(ops.sub(1.0, pc))))
    return ops.neg(ops.mean(ops.mul(weights, ll)))


LOSSES = {"HFL": hybrid_focal, "WCE": lambda p, t, cfg=None: weighted_cross_entropy(p, t)}


def get_loss(name: str):
    key = name.upper()
    if key not in LOSSES:
        raise ValueError(f"unknown loss {name!r}; expected one of {sorted(LOSSES)}")
    return LOSSES[key]
