"""
🛡️ 役割モデル
GraphSAGE サブモデル、積層マルチモデル (アンサンブル)、学習レポート、検知結果

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Any, Set
from dataclasses import dataclass, field
import json

import numpy as np

from app.models.feature_types import TypeMaps


ACTIVATIONS = {"relu": 0}


@dataclass
class Submodel:
    """GraphSAGE-mean 分類器 1個分の重み"""
    weights: List[np.ndarray]   # W^k: (幅_k, 2*幅_{k-1})
    biases: List[np.ndarray]    # b^k: (幅_k,)
    maps_fingerprint: str = ""
    activation: str = "relu"

    @property
    def hops(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[1] // 2] + [w.shape[0] for w in self.weights]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "Submodel":
        return Submodel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            maps_fingerprint=self.maps_fingerprint,
            activation=self.activation,
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(np.isfinite(b).all() for b in self.biases)


@dataclass
class Ensemble:
    """積層マルチモデル 𝕄_0..𝕄_{cnt-1}"""
    maps: TypeMaps
    ratio_threshold: float = 1.5
    submodels: List[Submodel] = field(default_factory=list)

    @property
    def cnt(self) -> int:
        return len(self.submodels)

    def append(self, submodel: Submodel) -> None:
        if self.submodels and submodel.widths != self.submodels[0].widths:
            raise ValueError(f"submodel widths {submodel.widths} differ from {self.submodels[0].widths}")
        self.submodels.append(submodel)

    def reordered(self, order: List[int]) -> "Ensemble":
        return Ensemble(self.maps, self.ratio_threshold, [self.submodels[i] for i in order])

    def with_ratio(self, ratio_threshold: float) -> "Ensemble":
        return Ensemble(self.maps, ratio_threshold, list(self.submodels))


# ===== 学習レポート =====

@dataclass
class SubmodelRecord:
    """サブモデル1個の学習記録"""
    index: int
    targets: int      # 学習対象 |X|
    accepted: int     # 学習後に確信分類されたノード数
    final_loss: float
    kept: bool = True


@dataclass
class TrainingReport:
    """アンサンブル学習の要約"""
    records: List[SubmodelRecord] = field(default_factory=list)
    unlearnable: Dict[str, str] = field(default_factory=dict)  # node_id → 原因
    trained_graphs: List[str] = field(default_factory=list)
    skipped_graphs: List[str] = field(default_factory=list)
    prefiltered: int = 0

    @property
    def cnt(self) -> int:
        return sum(1 for r in self.records if r.kept)

    @property
    def trajectory(self) -> List[int]:
        return [r.targets for r in self.records]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cnt": self.cnt,
            "trajectory": self.trajectory,
            "submodels": [r.__dict__ for r in self.records],
            "unlearnable": dict(sorted(self.unlearnable.items())),
            "trained_graphs": self.trained_graphs,
            "skipped_graphs": self.skipped_graphs,
            "prefiltered": self.prefiltered,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ===== 検知結果 =====

@dataclass
class NodeDiagnostics:
    """異常ノードの診断情報"""
    best_class: int
    ratio: float
    margins: List[float] = field(default_factory=list)       # サブモデル毎の ratio
    rows: List[np.ndarray] = field(default_factory=list)     # サブモデル毎の確率行
    reason: str = "misclassified"


@dataclass
class DetectionResult:
    """検知結果: 異常集合・良性集合・診断"""
    anomalous: Set[int] = field(default_factory=set)
    benign: Set[int] = field(default_factory=set)
    diagnostics: Dict[int, NodeDiagnostics] = field(default_factory=dict)
    excluded: Set[int] = field(default_factory=set)
