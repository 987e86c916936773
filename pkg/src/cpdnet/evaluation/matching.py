"""Tolerance-based one-to-one correspondence between boundary pixel sets."""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .. import _kernels
from .types import GroundTruth, MatchResult, as_ground_truth

EXACT_MAX_PIXELS = 64 * 64


def tolerance_radius(shape: tuple[int, int], max_dist_frac: float) -> float:
    if max_dist_frac <= 0:
        raise ValueError(f"max_dist_frac must be positive, got {max_dist_frac}")
    return max_dist_frac * math.hypot(shape[0], shape[1])


class CandidatePairs:
    """All (pred, gt) pixel pairs within the radius, sorted by distance.

    Built once per image and annotation on the full predicted support, then
    filtered per threshold.
    """

    def __init__(self, pred_coords: np.ndarray, gt_coords: np.ndarray, radius: float):
        self.n_pred = len(pred_coords)
        self.n_gt = len(gt_coords)
        if self.n_pred == 0 or self.n_gt == 0:
            self.p = np.zeros(0, dtype=np.int64)
            self.g = np.zeros(0, dtype=np.int64)
            self.d = np.zeros(0)
            return
        tree = cKDTree(gt_coords)
        hits = tree.query_ball_point(pred_coords, radius + 1e-9)
        p = np.repeat(np.arange(self.n_pred), [len(h) for h in hits]).astype(np.int64)
        g = np.fromiter((j for h in hits for j in h), dtype=np.int64, count=len(p))
        d = np.hypot(*(pred_coords[p] - gt_coords[g]).T.astype(np.float64)) if len(p) else np.zeros(0)
        inside = d <= radius
        p, g, d = p[inside], g[inside], d[inside]
        order = np.lexsort((g, p, d))
        self.p, self.g, self.d = p[order], g[order], d[order]

    def subset(self, active: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        keep = active[self.p]
        return self.p[keep], self.g[keep], self.d[keep]


def _exact_assignment(p, g, d, n_pred, n_gt) -> np.ndarray:
    """Maximum-cardinality, minimum-distance matching; returns match per pred."""
    match_p = np.full(n_pred, -1, dtype=np.int64)
    if len(p) == 0:
        return match_p
    graph = coo_matrix((np.ones(len(p)), (p, n_pred + g)), shape=(n_pred + n_gt,) * 2)
    _, labels = connected_components(graph, directed=False)
    comp = labels[p]
    order = np.argsort(comp, kind="stable")
    bounds = np.flatnonzero(np.diff(comp[order])) + 1
    for idx in np.split(order, bounds):
        pp, gg, dd = p[idx], g[idx], d[idx]
        rows, r_inv = np.unique(pp, return_inverse=True)
        cols, c_inv = np.unique(gg, return_inverse=True)
        # every real edge outweighs any sum of distances: cardinality first
        big = float(dd.sum()) + 1.0
        cost = np.zeros((len(rows), len(cols)))
        cost[r_inv, c_inv] = dd - big
        ri, ci = linear_sum_assignment(cost)
        real = cost[ri, ci] < 0
        match_p[rows[ri[real]]] = cols[ci[real]]
    return match_p


def _greedy_assignment(p, g, n_pred, n_gt) -> np.ndarray:
    match_p, _ = _kernels.greedy_augment_match(p, g, n_pred, n_gt)
    return match_p


def assign(p, g, d, n_pred: int, n_gt: int, method: str) -> np.ndarray:
    if method == "exact":
        return _exact_assignment(p, g, d, n_pred, n_gt)
    if method == "greedy":
        return _greedy_assignment(p, g, n_pred, n_gt)
    raise ValueError(f"unknown matching method {method!r}")


def resolve_method(shape: tuple[int, int], method: str = "auto") -> str:
    if method == "auto":
        return "exact" if shape[0] * shape[1] <= EXACT_MAX_PIXELS else "greedy"
    if method not in ("exact", "greedy"):
        raise ValueError(f"unknown matching method {method!r}")
    return method


def match_boundaries(pred_binary, gt, max_dist_frac: float = 0.0075, method: str = "auto") -> MatchResult:
    """Match a binary prediction against every annotation of ``gt``.

    A predicted pixel counts as TP when matched in any annotation; each
    annotation's unmatched pixels add to FN.
    """
    pred = np.asarray(pred_binary).astype(bool)
    gt = as_ground_truth(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth {gt.shape}")
    radius = tolerance_radius(pred.shape, max_dist_frac)
    method = resolve_method(pred.shape, method)
    coords = np.argwhere(pred)
    hit = np.zeros(len(coords), dtype=bool)
    result = MatchResult()
    for ann in gt.annotations:
        gcoords = np.argwhere(ann)
        pairs = CandidatePairs(coords, gcoords, radius)
        match_p = assign(pairs.p, pairs.g, pairs.d, pairs.n_pred, pairs.n_gt, method)
        matched = int((match_p >= 0).sum())
        hit |= match_p >= 0
        result.tp_gt += matched
        result.fn += len(gcoords) - matched
        result.per_annotation.append(matched)
    result.tp = int(hit.sum())
    result.fp = len(coords) - result.tp
    return result


def match_counts_over_thresholds(
    values: np.ndarray, gt: GroundTruth, thresholds: np.ndarray, max_dist_frac: float, method: str = "auto"
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(tp, fp, tp_gt, fn) arrays over ``thresholds`` for one image.

    Binarization is ``values >= t``. Candidate pairs are computed once.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != gt.shape:
        raise ValueError(f"prediction shape {values.shape} differs from ground truth {gt.shape}")
    radius = tolerance_radius(values.shape, max_dist_frac)
    method = resolve_method(values.shape, method)
    coords = np.argwhere(values > 0)
    pvals = values[coords[:, 0], coords[:, 1]] if len(coords) else np.zeros(0)
    pair_sets = [CandidatePairs(coords, np.argwhere(a), radius) for a in gt.annotations]
    n = len(thresholds)
    tp = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    tp_gt = np.zeros(n, dtype=np.int64)
    fn = np.zeros(n, dtype=np.int64)
    for k, t in enumerate(thresholds):
        active = pvals >= t
        hit = np.zeros(len(coords), dtype=bool)
        for pairs in pair_sets:
            p, g, d = pairs.subset(active)
            match_p = assign(p, g, d, pairs.n_pred, pairs.n_gt, method)
            matched = int((match_p >= 0).sum())
            hit |= match_p >= 0
            tp_gt[k] += matched
            fn[k] += pairs.n_gt - matched
        tp[k] = int(hit.sum())
        fp[k] = int(active.sum()) - tp[k]
    return tp, fp, tp_gt, fn
