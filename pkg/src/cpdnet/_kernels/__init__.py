"""Hot evaluation kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; setting
``CPDNET_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("CPDNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

thin = _impl.thin
nms_suppress = _impl.nms_suppress
greedy_augment_match = _impl.greedy_augment_match

__all__ = ["BACKEND", "thin", "nms_suppress", "greedy_augment_match"]
