"""Precision/recall curves, ODS/OIS, average precision and crispness."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .matching import match_counts_over_thresholds
from .nms import nms_thin
from .types import as_edge_map, as_ground_truth

THRESHOLDS = np.arange(1, 100) / 100.0
MODES = ("S", "C")


class DegenerateCurveWarning(UserWarning):
    """The precision/recall curve spans fewer than two recall values."""


def normalize_mode(mode: str) -> str:
    key = str(mode).upper().replace("-EVAL", "")
    if key not in MODES:
        raise ValueError(f"mode must be 'S' (with NMS) or 'C' (raw), got {mode!r}")
    return key


def safe_ratio(num, den) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def f_score(precision, recall) -> np.ndarray:
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    return safe_ratio(2.0 * p * r, p + r)


@dataclass
class ImageCounts:
    source_id: str
    tp: np.ndarray
    fp: np.ndarray
    tp_gt: np.ndarray
    fn: np.ndarray

    @property
    def precision(self) -> np.ndarray:
        return safe_ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> np.ndarray:
        return safe_ratio(self.tp_gt, self.tp_gt + self.fn)

    @property
    def f(self) -> np.ndarray:
        return f_score(self.precision, self.recall)


@dataclass
class PrCurve:
    """Per-threshold corpus aggregates plus per-image F rows.

    ``precision``/``recall``/``f`` come from corpus-summed counts and feed the
    area-under-curve; ``image_f`` (n_images x n_thresholds) feeds ODS/OIS.
    """

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f: np.ndarray
    image_f: np.ndarray
    has_predictions: np.ndarray | None = None
    images: list[ImageCounts] = field(default_factory=list)
    mode: str = "S"
    tolerance: float = 0.0075

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        if t.size == 0:
            raise ValueError("curve needs at least one threshold")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        self.image_f = np.atleast_2d(np.asarray(self.image_f, dtype=np.float64))
        if self.has_predictions is None:
            self.has_predictions = np.ones(t.size, dtype=bool)

    @property
    def n_images(self) -> int:
        return self.image_f.shape[0]

    @classmethod
    def from_image_scores(cls, image_f, thresholds=None) -> "PrCurve":
        """Curve carrying only per-image F rows (for ODS/OIS arithmetic)."""
        image_f = np.atleast_2d(np.asarray(image_f, dtype=np.float64))
        if thresholds is None:
            thresholds = np.arange(1, image_f.shape[1] + 1) / (image_f.shape[1] + 1)
        zeros = np.zeros(image_f.shape[1])
        return cls(np.asarray(thresholds, dtype=np.float64), zeros, zeros, zeros, image_f)

    @classmethod
    def from_pr_points(cls, recall, precision) -> "PrCurve":
        """Curve carrying only corpus precision/recall points (for AP arithmetic)."""
        recall = np.asarray(recall, dtype=np.float64)
        precision = np.asarray(precision, dtype=np.float64)
        t = np.arange(1, recall.size + 1) / (recall.size + 1)
        return cls(t, precision, recall, f_score(precision, recall), np.zeros((1, recall.size)))


def compute_curve(
    preds: Sequence,
    gts: Sequence,
    mode: str = "S",
    max_dist_frac: float = 0.0075,
    thresholds: np.ndarray = THRESHOLDS,
    method: str = "auto",
) -> PrCurve:
    """Score a corpus of edge maps against ground truth over all thresholds."""
    mode = normalize_mode(mode)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions but {len(gts)} ground truths")
    if len(preds) == 0:
        raise ValueError("empty corpus")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    images = []
    for i, (pred, gt) in enumerate(zip(preds, gts)):
        em = as_edge_map(pred, str(i))
        gt = as_ground_truth(gt, em.source_id)
        if em.shape != gt.shape:
            raise ValueError(f"image {em.source_id!r}: prediction {em.shape} vs ground truth {gt.shape}")
        values = nms_thin(em.values) if mode == "S" else em.values
        tp, fp, tp_gt, fn = match_counts_over_thresholds(values, gt, thresholds, max_dist_frac, method)
        images.append(ImageCounts(em.source_id or str(i), tp, fp, tp_gt, fn))
    tp = sum(im.tp for im in images)
    fp = sum(im.fp for im in images)
    tp_gt = sum(im.tp_gt for im in images)
    fn = sum(im.fn for im in images)
    precision = safe_ratio(tp, tp + fp)
    recall = safe_ratio(tp_gt, tp_gt + fn)
    return PrCurve(
        thresholds=thresholds,
        precision=precision,
        recall=recall,
        f=f_score(precision, recall),
        image_f=np.stack([im.f for im in images]),
        has_predictions=(tp + fp) > 0,
        images=images,
        mode=mode,
        tolerance=max_dist_frac,
    )


def ods_ois(curve: PrCurve) -> tuple[float, float]:
    """ODS: best threshold of the image-mean F. OIS: mean of per-image best F."""
    f = curve.image_f
    if f.size == 0:
        raise ValueError("curve has no scores")
    ods = float(np.max(np.mean(f, axis=0)))
    ois = float(np.mean(np.max(f, axis=1)))
    return ods, ois


def average_precision(curve: PrCurve) -> float:
    """Trapezoidal area under precision(recall) over the observed recall range.

    Thresholds with no predicted pixels anywhere in the corpus carry no
    precision and are dropped. Fewer than two distinct recall values give 0
    and a :class:`DegenerateCurveWarning`.
    """
    mask = np.asarray(curve.has_predictions, dtype=bool)
    r = np.asarray(curve.recall, dtype=np.float64)[mask]
    p = np.asarray(curve.precision, dtype=np.float64)[mask]
    if np.unique(r).size < 2:
        warnings.warn("precision/recall curve is degenerate; AP reported as 0", DegenerateCurveWarning, stacklevel=2)
        return 0.0
    order = np.lexsort((p, r))
    r, p = r[order], p[order]
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) * 0.5))


def average_crispness(raw) -> float | None:
    """Post-NMS mass over raw mass; ``None`` for an all-zero map."""
    values = as_edge_map(raw).values
    total = float(values.sum())
    if total <= 0:
        return None
    return float(nms_thin(values).sum()) / total


def corpus_crispness(maps: Sequence) -> tuple[float, int]:
    """Mean AC over images where it is defined, and the number skipped."""
    acs = [average_crispness(m) for m in maps]
    defined = [a for a in acs if a is not None]
    skipped = len(acs) - len(defined)
    return (float(np.mean(defined)) if defined else float("nan")), skipped
