"""Non-maximum suppression followed by morphological thinning."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .. import _kernels
from .types import EdgeMap, as_edge_map

SMOOTH_SIGMA = 1.0
TIE_TOLERANCE = 1e-7


def edge_normals(smooth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals across ridges of ``smooth`` as (nx, ny) arrays.

    The normal is the eigenvector of the Sobel-derivative Hessian with the
    most negative eigenvalue. Axis-aligned structures get exact axis normals.
    """
    gx = ndimage.sobel(smooth, axis=1)
    gy = ndimage.sobel(smooth, axis=0)
    a = ndimage.sobel(gx, axis=1)
    c = ndimage.sobel(gy, axis=0)
    b = ndimage.sobel(gx, axis=0)
    half = 0.5 * (a - c)
    lam = 0.5 * (a + c) - np.hypot(half, b)
    # two algebraically equivalent eigenvector forms; keep the better conditioned
    v1x, v1y = lam - c, b
    v2x, v2y = b, lam - a
    use1 = np.hypot(v1x, v1y) >= np.hypot(v2x, v2y)
    vx = np.where(use1, v1x, v2x)
    vy = np.where(use1, v1y, v2y)
    norm = np.hypot(vx, vy)
    flat = norm == 0
    # isotropic or flat neighbourhood: any normal will do, use the y axis
    vx = np.where(flat, (a < c).astype(np.float64), vx)
    vy = np.where(flat, (a >= c).astype(np.float64), vy)
    norm = np.where(flat, 1.0, norm)
    return vx / norm, vy / norm


def suppress(values: np.ndarray, sigma: float = SMOOTH_SIGMA, tie_tol: float = TIE_TOLERANCE) -> np.ndarray:
    """Boolean mask of pixels that are maxima along their ridge normal."""
    smooth = ndimage.gaussian_filter(values, sigma, mode="reflect")
    nx, ny = edge_normals(smooth)
    return _kernels.nms_suppress(values, smooth, nx, ny, tie_tol).astype(bool)


def nms_thin(edge, sigma: float = SMOOTH_SIGMA, tie_tol: float = TIE_TOLERANCE, max_rounds: int = 64):
    """Suppress non-maxima and thin to single-pixel 8-connected ridges.

    Suppression and thinning alternate until the support stops changing,
    which makes the operation idempotent. Survivors keep their input value.
    Returns the same kind of object that was passed in.
    """
    em = as_edge_map(edge)
    values = em.values
    current = values
    for _ in range(max_rounds):
        keep = _kernels.thin(suppress(current, sigma, tie_tol) & (current > 0)).astype(bool)
        nxt = np.where(keep, values, 0.0)
        if np.array_equal(nxt, current):
            break
        current = nxt
    if isinstance(edge, EdgeMap):
        return EdgeMap(current, edge.source_id)
    return current
