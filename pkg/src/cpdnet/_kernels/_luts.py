"""Lookup tables for two-subiteration parallel thinning.

Neighbour bits, counter-clockwise from east::

    bit3 bit2 bit1
    bit4  P   bit0
    bit5 bit6 bit7

A pixel is deletable in a subiteration when it has exactly one 4-connected
"gap" run (crossing number 1), when 2 <= min(N1, N2) <= 3, and when the
subiteration's directional condition holds.
"""
from __future__ import annotations

import numpy as np

# (dy, dx) of each neighbour bit
NEIGHBOUR_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


def _bits(code: int) -> list[bool]:
    return [bool(code >> k & 1) for k in range(8)]


def _crossing_ok(b: list[bool]) -> bool:
    runs = sum(1 for i in (0, 2, 4, 6) if not b[i] and (b[i + 1] or b[(i + 2) % 8]))
    return runs == 1


def _neighbour_count_ok(b: list[bool]) -> bool:
    n1 = sum(1 for k in (1, 3, 5, 7) if b[k] or b[k - 1])
    n2 = sum(1 for k in (1, 3, 5, 7) if b[k] or b[(k + 1) % 8])
    return 2 <= min(n1, n2) <= 3


def build_thinning_luts() -> tuple[np.ndarray, np.ndarray]:
    first = np.zeros(256, dtype=np.uint8)
    second = np.zeros(256, dtype=np.uint8)
    for code in range(256):
        b = _bits(code)
        if not (_crossing_ok(b) and _neighbour_count_ok(b)):
            continue
        if not ((b[1] or b[2] or not b[7]) and b[0]):
            first[code] = 1
        if not ((b[5] or b[6] or not b[3]) and b[4]):
            second[code] = 1
    return first, second


THIN_LUT_FIRST, THIN_LUT_SECOND = build_thinning_luts()
