"""Metric report in table and key=value forms."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .metrics import average_precision, compute_curve, corpus_crispness, ods_ois

KEYS = ("ods", "ois", "ap", "ac", "mode", "tolerance", "n_images")


@dataclass
class EvalReport:
    ods: float
    ois: float
    ap: float
    ac: float
    mode: str
    tolerance: float
    n_images: int
    ac_skipped: int = 0

    def to_kv(self) -> str:
        d = asdict(self)
        lines = []
        for key in KEYS + ("ac_skipped",):
            v = d[key]
            lines.append(f"{key}={v:.6f}" if isinstance(v, float) else f"{key}={v}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        head = f"{'mode':>6} {'tol':>8} {'ODS':>7} {'OIS':>7} {'AP':>7} {'AC':>7} {'N':>5}"
        row = (
            f"{self.mode + '-Eval':>6} {self.tolerance:>8.4f} {self.ods:>7.4f} {self.ois:>7.4f} "
            f"{self.ap:>7.4f} {self.ac:>7.4f} {self.n_images:>5d}"
        )
        return head + "\n" + row

    def write(self, path) -> None:
        Path(path).write_text(self.to_kv())

    @classmethod
    def parse(cls, text: str) -> "EvalReport":
        d = dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)
        return cls(
            ods=float(d["ods"]), ois=float(d["ois"]), ap=float(d["ap"]), ac=float(d["ac"]),
            mode=d["mode"], tolerance=float(d["tolerance"]), n_images=int(d["n_images"]),
            ac_skipped=int(d.get("ac_skipped", 0)),
        )


def evaluate(preds: Sequence, gts: Sequence, mode: str = "S", max_dist_frac: float = 0.0075) -> EvalReport:
    curve = compute_curve(preds, gts, mode, max_dist_frac)
    ods, ois = ods_ois(curve)
    ac, skipped = corpus_crispness(preds)
    return EvalReport(ods, ois, average_precision(curve), ac, curve.mode, max_dist_frac, curve.n_images, skipped)
