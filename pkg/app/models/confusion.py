"""
🛡️ 混同行列
TP / TN / FP / FN の集計 (反復平均では実数になる)

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, Iterable
from dataclasses import dataclass


@dataclass
class ConfusionCounts:
    tp: float = 0
    tn: float = 0
    fp: float = 0
    fn: float = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> float:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> Dict[str, float]:
        return {"TP": self.tp, "TN": self.tn, "FP": self.fp, "FN": self.fn}

    @classmethod
    def mean(cls, runs: Iterable["ConfusionCounts"]) -> "ConfusionCounts":
        runs = list(runs)
        if not runs:
            return cls()
        n = len(runs)
        return cls(
            sum(r.tp for r in runs) / n,
            sum(r.tn for r in runs) / n,
            sum(r.fp for r in runs) / n,
            sum(r.fn for r in runs) / n,
        )
