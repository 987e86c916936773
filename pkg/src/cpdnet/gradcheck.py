"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

MAX_KINK_FRACTION = 0.1


@dataclass
class GradCheckReport:
    """Outcome of :func:`finite_diff_check`.

    ``errors`` maps a parameter label to the relative error of its gradient
    tensor, ``|a - f| / max(|a|, |f|, 1e-8)`` with ``|.|`` the Euclidean norm
    over the checked entries. ``entry_errors`` holds the worst single-entry
    ratio for diagnostics only. ``kinks`` counts entries excluded because
    the loss is visibly non-smooth inside the stencil; when they exceed
    ``MAX_KINK_FRACTION`` of ``checked`` the report fails.
    """

    errors: dict[str, float] = field(default_factory=dict)
    entry_errors: dict[str, float] = field(default_factory=dict)
    finite: bool = True
    message: str = ""
    checked: int = 0
    kinks: int = 0

    @property
    def max_error(self) -> float:
        if not self.finite or self.kinks > MAX_KINK_FRACTION * max(self.checked, 1):
            return float("inf")
        return max(self.errors.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.finite and self.max_error <= tolerance


def relative_error(a: np.ndarray, f: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    f = np.asarray(f, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(f), 1e-8)
    return float(np.linalg.norm(a - f) / denom)


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-3,
    *,
    max_entries: int | None = None,
    seed: int = 0,
    reference_dtype=None,
    kink_tol: float | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` takes no arguments and must read ``params`` afresh on each
    call. With ``max_entries`` set, each parameter is probed on a random
    subset of that many entries. A non-finite loss marks the report failed
    instead of raising.

    With ``reference_dtype`` (e.g. float64) the central differences are
    evaluated after promoting every parameter to that dtype, so the
    analytic gradient of the native-precision graph is compared against a
    low-noise reference of the same function.

    With ``kink_tol`` set, an entry whose one-sided differences disagree by
    more than that fraction (a ReLU switching inside the stencil) is left
    out of the error and counted in ``report.kinks``.
    """
    if not 1e-5 <= epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in [1e-5, 1e-2], got {epsilon}")
    report = GradCheckReport()
    rng = np.random.default_rng(seed)

    for p in params:
        p.grad = None
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        report.finite = False
        report.message = "loss is not finite at the base point"
        return report
    loss.backward()

    originals = [p.data for p in params]
    if reference_dtype is not None:
        for p in params:
            p.data = p.data.astype(reference_dtype)
    try:
        base = None
        if kink_tol is not None:
            with no_grad():
                base = float(np.sum(loss_fn().data, dtype=np.float64))
        _probe_all(loss_fn, params, epsilon, max_entries, rng, report, base, kink_tol)
    finally:
        for p, data in zip(params, originals):
            p.data = data
    return report


def _probe_all(loss_fn, params, epsilon, max_entries, rng, report, base, kink_tol) -> None:
    for idx, p in enumerate(params):
        label = getattr(p, "name", "") or f"param{idx}"
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(entries.size, dtype=np.float64)
        smooth = np.ones(entries.size, dtype=bool)
        with no_grad():
            for k, e in enumerate(entries):
                original = flat[e]
                flat[e] = original + epsilon
                up = float(np.sum(loss_fn().data, dtype=np.float64))
                flat[e] = original - epsilon
                down = float(np.sum(loss_fn().data, dtype=np.float64))
                flat[e] = original
                if not (np.isfinite(up) and np.isfinite(down)):
                    report.finite = False
                    report.message = f"loss is not finite when perturbing {label}[{e}]"
                    return
                # actual step after rounding to the storage dtype
                hi = float(p.data.dtype.type(original + epsilon))
                lo = float(p.data.dtype.type(original - epsilon))
                numeric[k] = (up - down) / (hi - lo)
                if base is not None:
                    right = (up - base) / (hi - float(original))
                    left = (base - down) / (float(original) - lo)
                    scale = max(abs(right), abs(left), 1e-3)
                    smooth[k] = abs(right - left) <= kink_tol * scale
        report.checked += entries.size
        report.kinks += int((~smooth).sum())
        entries, numeric = entries[smooth], numeric[smooth]
        a = analytic.reshape(-1)[entries]
        report.errors[label] = relative_error(a, numeric)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        report.entry_errors[label] = float(np.max(np.abs(a - numeric) / denom)) if entries.size else 0.0
