"""
🛡️ 特徴量モデル
型マップ (M_v, M_e) とノード特徴量 (ラベル + 入出力エッジ型ヒストグラム)

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Optional, Set
from dataclasses import dataclass, field
import hashlib
import json

import numpy as np

from app.models.errors import UnknownType


@dataclass
class TypeMaps:
    """ノード型/エッジ型 → 密な整数クラスの写像"""
    node_type_map: Dict[str, int] = field(default_factory=dict)
    edge_type_map: Dict[str, int] = field(default_factory=dict)
    frozen: bool = False

    @property
    def n_node_types(self) -> int:
        return len(self.node_type_map)

    @property
    def n_edge_types(self) -> int:
        return len(self.edge_type_map)

    @property
    def feature_width(self) -> int:
        return 2 * self.n_edge_types

    def register_node_type(self, node_type: str) -> int:
        if node_type not in self.node_type_map:
            if self.frozen:
                raise UnknownType("node", node_type)
            self.node_type_map[node_type] = len(self.node_type_map)
        return self.node_type_map[node_type]

    def register_edge_type(self, edge_type: str) -> int:
        if edge_type not in self.edge_type_map:
            if self.frozen:
                raise UnknownType("edge", edge_type)
            self.edge_type_map[edge_type] = len(self.edge_type_map)
        return self.edge_type_map[edge_type]

    def node_label(self, node_type: str) -> int:
        try:
            return self.node_type_map[node_type]
        except KeyError:
            raise UnknownType("node", node_type) from None

    def edge_index(self, edge_type: str) -> int:
        try:
            return self.edge_type_map[edge_type]
        except KeyError:
            raise UnknownType("edge", edge_type) from None

    def freeze(self) -> "TypeMaps":
        self.frozen = True
        return self

    def node_type_names(self) -> List[str]:
        return [name for name, _ in sorted(self.node_type_map.items(), key=lambda kv: kv[1])]

    def edge_type_names(self) -> List[str]:
        return [name for name, _ in sorted(self.edge_type_map.items(), key=lambda kv: kv[1])]

    def to_dict(self) -> Dict[str, List[str]]:
        return {"node_types": self.node_type_names(), "edge_types": self.edge_type_names()}

    @classmethod
    def from_dict(cls, payload: Dict[str, List[str]]) -> "TypeMaps":
        maps = cls(
            node_type_map={name: i for i, name in enumerate(payload["node_types"])},
            edge_type_map={name: i for i, name in enumerate(payload["edge_types"])},
        )
        return maps.freeze()

    def fingerprint(self) -> str:
        """モデルと型マップを結び付けるハッシュ"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class NodeFeature:
    """ノードのラベル L(v) と特徴量 F(v)"""
    label: int
    vector: tuple  # 長さ 2*N_e の非負整数

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=np.int64)


@dataclass
class FeatureTable:
    """サブグラフ全ノードの特徴量を行列で保持する

    rows は ordinal の昇順。vectors は整数行列で、GNN の入口でのみ float に変換する。
    unknown には凍結マップに無い型を持つノード (方針 flag のとき) が入る。
    """
    nodes: np.ndarray           # (n,) ordinal
    labels: np.ndarray          # (n,) クラス、未知型は -1
    vectors: np.ndarray         # (n, 2*N_e) int64
    unknown: Set[int] = field(default_factory=set)

    def __post_init__(self):
        self._row = {int(v): i for i, v in enumerate(self.nodes)}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, ordinal: int) -> bool:
        return ordinal in self._row

    def row_of(self, ordinal: int) -> int:
        return self._row[ordinal]

    def rows_of(self, ordinals) -> np.ndarray:
        return np.array([self._row[int(v)] for v in ordinals], dtype=np.int64)

    def feature(self, ordinal: int) -> NodeFeature:
        row = self._row[ordinal]
        return NodeFeature(label=int(self.labels[row]), vector=tuple(int(c) for c in self.vectors[row]))

    def as_float(self) -> np.ndarray:
        return self.vectors.astype(np.float64)

    def restrict(self, ordinals) -> "FeatureTable":
        """指定ノードだけの表 (ordinal 昇順)"""
        ordinals = np.array(sorted(int(v) for v in ordinals), dtype=np.int64)
        rows = self.rows_of(ordinals)
        unknown = self.unknown & set(ordinals.tolist())
        return FeatureTable(ordinals, self.labels[rows], self.vectors[rows], unknown)

    def with_vector(self, ordinal: int, vector: np.ndarray) -> "FeatureTable":
        """1ノードの特徴量を差し替えた複製"""
        vectors = self.vectors.copy()
        vectors[self._row[ordinal]] = np.asarray(vector, dtype=np.int64)
        return FeatureTable(self.nodes.copy(), self.labels.copy(), vectors, set(self.unknown))


def swap_direction(vector: np.ndarray, n_edge_types: Optional[int] = None) -> np.ndarray:
    """入次数スロットと出次数スロットを入れ替える (エッジの相手側から見た変化量)"""
    vector = np.asarray(vector)
    half = vector.shape[-1] // 2 if n_edge_types is None else n_edge_types
    return np.concatenate([vector[..., half:], vector[..., :half]], axis=-1)
