"""Pure numpy/Python kernels; reference behaviour for the compiled versions."""
from __future__ import annotations

import numpy as np

from ._luts import NEIGHBOUR_OFFSETS, THIN_LUT_FIRST, THIN_LUT_SECOND


def _neighbour_codes(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    padded = np.zeros((h + 2, w + 2), dtype=np.uint8)
    padded[1:-1, 1:-1] = img
    code = np.zeros((h, w), dtype=np.uint8)
    for bit, (dy, dx) in enumerate(NEIGHBOUR_OFFSETS):
        code |= padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] << np.uint8(bit)
    return code


def thin(mask: np.ndarray) -> np.ndarray:
    """Iterate both thinning subiterations until nothing changes."""
    img = (np.asarray(mask) != 0).astype(np.uint8)
    while True:
        changed = False
        for lut in (THIN_LUT_FIRST, THIN_LUT_SECOND):
            delete = (lut[_neighbour_codes(img)] != 0) & (img != 0)
            if delete.any():
                img[delete] = 0
                changed = True
        if not changed:
            return img


def _bilinear(values: np.ndarray, qy: np.ndarray, qx: np.ndarray) -> np.ndarray:
    h, w = values.shape
    y0 = np.floor(qy).astype(np.int64)
    x0 = np.floor(qx).astype(np.int64)
    fy = qy - y0
    fx = qx - x0
    out = np.zeros(qy.shape, dtype=np.float64)
    for dy, dx, wt in (
        (0, 0, (1.0 - fy) * (1.0 - fx)),
        (0, 1, (1.0 - fy) * fx),
        (1, 0, fy * (1.0 - fx)),
        (1, 1, fy * fx),
    ):
        yy = y0 + dy
        xx = x0 + dx
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        v = np.zeros(qy.shape, dtype=np.float64)
        v[inside] = values[yy[inside], xx[inside]]
        out = out + wt * v
    return out


def nms_suppress(
    raw: np.ndarray, smooth: np.ndarray, nx: np.ndarray, ny: np.ndarray, tie_tol: float
) -> np.ndarray:
    """Keep-mask of pixels that dominate both neighbours along their normal.

    Dominance is lexicographic: raw value first, smoothed value on ties.
    """
    raw = np.ascontiguousarray(raw, dtype=np.float64)
    smooth = np.ascontiguousarray(smooth, dtype=np.float64)
    keep = np.zeros(raw.shape, dtype=np.uint8)
    ys, xs = np.nonzero(raw > 0)
    if ys.size == 0:
        return keep
    e0 = raw[ys, xs]
    s0 = smooth[ys, xs]
    ok = np.ones(ys.size, dtype=bool)
    for sign in (1.0, -1.0):
        qy = ys + sign * ny[ys, xs]
        qx = xs + sign * nx[ys, xs]
        ev = _bilinear(raw, qy, qx)
        sv = _bilinear(smooth, qy, qx)
        tie = np.abs(e0 - ev) <= tie_tol
        ok &= (e0 > ev + tie_tol) | (tie & (s0 >= sv))
    keep[ys[ok], xs[ok]] = 1
    return keep


def greedy_augment_match(
    pair_p: np.ndarray, pair_g: np.ndarray, n_pred: int, n_gt: int
) -> tuple[np.ndarray, np.ndarray]:
    """Distance-ordered greedy matching, then augmenting paths to maximum size.

    ``pair_p``/``pair_g`` list candidate edges already sorted by distance.
    """
    match_p = np.full(n_pred, -1, dtype=np.int64)
    match_g = np.full(n_gt, -1, dtype=np.int64)
    pp = [int(v) for v in pair_p]
    gg = [int(v) for v in pair_g]
    for p, g in zip(pp, gg):
        if match_p[p] < 0 and match_g[g] < 0:
            match_p[p] = g
            match_g[g] = p

    # adjacency in edge order (closest first) per predicted pixel
    adj: list[list[int]] = [[] for _ in range(n_pred)]
    for p, g in zip(pp, gg):
        adj[p].append(g)

    stamp = [0] * n_gt
    mp = match_p.tolist()
    mg = match_g.tolist()
    for root in range(n_pred):
        if mp[root] >= 0 or not adj[root]:
            continue
        token = root + 1
        # iterative DFS over alternating paths
        stack_p = [root]
        stack_i = [0]
        via_g: list[int] = []
        found = False
        while stack_p:
            p = stack_p[-1]
            i = stack_i[-1]
            if i >= len(adj[p]):
                stack_p.pop()
                stack_i.pop()
                if via_g:
                    via_g.pop()
                continue
            stack_i[-1] = i + 1
            g = adj[p][i]
            if stamp[g] == token:
                continue
            stamp[g] = token
            if mg[g] < 0:
                via_g.append(g)
                found = True
                break
            via_g.append(g)
            stack_p.append(mg[g])
            stack_i.append(0)
        if found:
            for p, g in zip(stack_p, via_g):
                mp[p] = g
                mg[g] = p
    return np.asarray(mp, dtype=np.int64), np.asarray(mg, dtype=np.int64)
