"""Boundary evaluation: NMS thinning, matching, PR curves, ODS/OIS/AP, crispness."""
from .matching import match_boundaries, tolerance_radius
from .metrics import (
    THRESHOLDS,
    DegenerateCurveWarning,
    PrCurve,
    average_crispness,
    average_precision,
    compute_curve,
    corpus_crispness,
    ods_ois,
)
from .nms import nms_thin
from .report import EvalReport, evaluate
from .types import EdgeMap, GroundTruth, MatchResult

__all__ = [
    "THRESHOLDS",
    "DegenerateCurveWarning",
    "EdgeMap",
    "EvalReport",
    "GroundTruth",
    "MatchResult",
    "PrCurve",
    "average_crispness",
    "average_precision",
    "compute_curve",
    "corpus_crispness",
    "evaluate",
    "match_boundaries",
    "nms_thin",
    "ods_ois",
    "tolerance_radius",
]
