"""Compare the compiled and pure-Python evaluation kernels.

Usage::

    python benchmarks/bench_kernels.py [--size 321] [--repeat 5]

Both backends are imported directly, so the environment switch is not needed.
Outputs are checked for bit equality before timing.
"""
from __future__ import annotations

import argparse
import time

import numpy as np
from scipy import ndimage

from cpdnet._kernels import _pykernels

try:
    from cpdnet._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _edge_like(size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.random((size, size)), 4.0)
    grad = np.hypot(ndimage.sobel(field, 0), ndimage.sobel(field, 1))
    return grad / grad.max()


def _inputs(size: int, seed: int):
    from cpdnet.evaluation.matching import CandidatePairs, tolerance_radius
    from cpdnet.evaluation.nms import SMOOTH_SIGMA, TIE_TOLERANCE, edge_normals

    raw = _edge_like(size, seed)
    smooth = ndimage.gaussian_filter(raw, SMOOTH_SIGMA, mode="reflect")
    nx, ny = edge_normals(smooth)
    mask = raw > 0.3
    pred = _edge_like(size, seed + 1) > 0.5
    gt = _edge_like(size, seed + 2) > 0.5
    pairs = CandidatePairs(np.argwhere(pred), np.argwhere(gt), tolerance_radius(pred.shape, 0.0075))
    return {
        "thin": (mask,),
        "nms_suppress": (raw, smooth, nx, ny, TIE_TOLERANCE),
        "greedy_augment_match": (pairs.p, pairs.g, pairs.n_pred, pairs.n_gt),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def _time(fn, args, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=321)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; nothing to compare")
        return 1
    inputs = _inputs(args.size, args.seed)
    print(f"{'kernel':<22}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}  equal")
    for name, kargs in inputs.items():
        py_fn, c_fn = getattr(_pykernels, name), getattr(_ckernels, name)
        equal = _same(py_fn(*kargs), c_fn(*kargs))
        tp = _time(py_fn, kargs, args.repeat)
        tc = _time(c_fn, kargs, args.repeat)
        print(f"{name:<22}{tp * 1e3:>14.2f}{tc * 1e3:>14.2f}{tp / tc:>10.1f}  {equal}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
