"""Value types shared by the evaluation protocol."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EdgeMap:
    """A predicted edge probability map."""

    values: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"edge map must be 2-D, got shape {self.values.shape}")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError(f"edge map {self.source_id!r} has values outside [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class GroundTruth:
    """One binary boundary map per annotator."""

    annotations: list[np.ndarray]
    source_id: str = ""

    def __post_init__(self):
        if isinstance(self.annotations, np.ndarray) and self.annotations.ndim == 2:
            self.annotations = [self.annotations]
        anns = [np.asarray(a) for a in self.annotations]
        if not anns:
            raise ValueError("ground truth needs at least one annotation")
        shape = anns[0].shape
        for a in anns:
            if a.ndim != 2 or a.shape != shape:
                raise ValueError(f"annotations must share one 2-D shape, got {a.shape} and {shape}")
            if not np.isin(a, (0, 1)).all():
                raise ValueError(f"annotation of {self.source_id!r} is not binary")
        self.annotations = [a.astype(bool) for a in anns]

    @property
    def shape(self) -> tuple[int, int]:
        return self.annotations[0].shape


@dataclass
class MatchResult:
    """Correspondence counts for one binarized prediction."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tp_gt: int = 0
    per_annotation: list[int] = field(default_factory=list)

    @property
    def n_pred(self) -> int:
        return self.tp + self.fp

    @property
    def n_gt(self) -> int:
        return self.tp_gt + self.fn


def as_edge_map(x, source_id: str = "") -> EdgeMap:
    return x if isinstance(x, EdgeMap) else EdgeMap(np.asarray(x, dtype=np.float64), source_id)


def as_ground_truth(x, source_id: str = "") -> GroundTruth:
    if isinstance(x, GroundTruth):
        return x
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return GroundTruth([x], source_id)
    return GroundTruth(list(x), source_id)
