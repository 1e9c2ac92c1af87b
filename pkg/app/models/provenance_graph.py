"""
🛡️ 来歴グラフ モデル
型付き・タイムスタンプ付き有向マルチグラフと、学習/検知用サブグラフ

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Iterable, Iterator, Optional, Set, Tuple, FrozenSet
from dataclasses import dataclass, field

import numpy as np

from app.models.errors import TypeConflict, UnknownNode


# ===== 基本レコード =====

@dataclass(frozen=True)
class EdgeRecord:
    """正規形式の1エッジ (src_id, src_type, dst_id, dst_type, edge_type, timestamp)"""
    src_id: str
    src_type: str
    dst_id: str
    dst_type: str
    edge_type: str
    timestamp: Optional[int] = None  # 欠落時は edge_id で補完

    def to_line(self) -> str:
        ts = "" if self.timestamp is None else str(self.timestamp)
        return "\t".join([self.src_id, self.src_type, self.dst_id, self.dst_type, self.edge_type, ts])


# ===== 来歴グラフ本体 =====

class ProvenanceGraph:
    """来歴グラフ G = (V, E, X_v, X_e, T_e)

    ノードIDは不透明な文字列で、内部では出現順の密な整数 (ordinal) に写像する。
    エッジは追記のみで edge_id は到着順に厳密に増加する。
    """

    def __init__(self, graph_id: str = ""):
        self.graph_id = graph_id
        self.node_ids: List[str] = []
        self.node_types: List[str] = []
        self._index: Dict[str, int] = {}

        # エッジ列 (edge_id = リスト上の位置)
        self.edge_src: List[int] = []
        self.edge_dst: List[int] = []
        self.edge_types: List[str] = []
        self.timestamps: List[int] = []

        # 隣接 (edge_id のリスト)
        self.in_edges: List[List[int]] = []
        self.out_edges: List[List[int]] = []

    # --- ノード ---

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_edges(self) -> int:
        return len(self.edge_src)

    def add_node(self, node_id: str, node_type: str, line_no: Optional[int] = None) -> int:
        """ノードを登録し ordinal を返す (既存なら型整合を確認)"""
        ordinal = self._index.get(node_id)
        if ordinal is not None:
            known = self.node_types[ordinal]
            if known != node_type:
                raise TypeConflict(node_id, known, node_type, line_no)
            return ordinal

        ordinal = len(self.node_ids)
        self._index[node_id] = ordinal
        self.node_ids.append(node_id)
        self.node_types.append(node_type)
        self.in_edges.append([])
        self.out_edges.append([])
        return ordinal

    def has_node(self, node_id: str) -> bool:
        return node_id in self._index

    def ordinal(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def node_type_of(self, node_id: str) -> str:
        return self.node_types[self.ordinal(node_id)]

    # --- エッジ ---

    def check_record(self, record: EdgeRecord, line_no: Optional[int] = None) -> None:
        """追記前の型整合チェック (状態は変更しない)"""
        for node_id, node_type in ((record.src_id, record.src_type), (record.dst_id, record.dst_type)):
            ordinal = self._index.get(node_id)
            if ordinal is not None and self.node_types[ordinal] != node_type:
                raise TypeConflict(node_id, self.node_types[ordinal], node_type, line_no)
        if record.src_id == record.dst_id and record.src_type != record.dst_type:
            raise TypeConflict(record.src_id, record.src_type, record.dst_type, line_no)

    def add_edge(self, record: EdgeRecord, line_no: Optional[int] = None) -> int:
        """エッジを追記し edge_id を返す"""
        self.check_record(record, line_no)
        src = self.add_node(record.src_id, record.src_type, line_no)
        dst = self.add_node(record.dst_id, record.dst_type, line_no)

        edge_id = len(self.edge_src)
        self.edge_src.append(src)
        self.edge_dst.append(dst)
        self.edge_types.append(record.edge_type)
        self.timestamps.append(edge_id if record.timestamp is None else int(record.timestamp))
        self.out_edges[src].append(edge_id)
        self.in_edges[dst].append(edge_id)
        return edge_id

    def edge_record(self, edge_id: int) -> EdgeRecord:
        src = self.edge_src[edge_id]
        dst = self.edge_dst[edge_id]
        return EdgeRecord(
            src_id=self.node_ids[src],
            src_type=self.node_types[src],
            dst_id=self.node_ids[dst],
            dst_type=self.node_types[dst],
            edge_type=self.edge_types[edge_id],
            timestamp=self.timestamps[edge_id],
        )

    def iter_records(self) -> Iterator[EdgeRecord]:
        for edge_id in range(self.num_edges):
            yield self.edge_record(edge_id)

    def in_neighbors(self, ordinal: int) -> Set[int]:
        return {self.edge_src[e] for e in self.in_edges[ordinal]}

    def out_neighbors(self, ordinal: int) -> Set[int]:
        return {self.edge_dst[e] for e in self.out_edges[ordinal]}

    def induced_edges(self, members: Iterable[int]) -> np.ndarray:
        """members 間のエッジ id を昇順で返す"""
        member_set = members if isinstance(members, (set, frozenset)) else set(members)
        found: List[int] = []
        for v in member_set:
            for e in self.out_edges[v]:
                if self.edge_dst[e] in member_set:
                    found.append(e)
        return np.array(sorted(found), dtype=np.int64)

    # --- 構築ヘルパー ---

    @classmethod
    def from_records(cls, records: Iterable[EdgeRecord], graph_id: str = "") -> "ProvenanceGraph":
        graph = cls(graph_id)
        for line_no, record in enumerate(records, start=1):
            graph.add_edge(record, line_no)
        return graph

    def copy(self, graph_id: Optional[str] = None) -> "ProvenanceGraph":
        clone = ProvenanceGraph(self.graph_id if graph_id is None else graph_id)
        for node_id, node_type in zip(self.node_ids, self.node_types):
            clone.add_node(node_id, node_type)
        for record in self.iter_records():
            clone.add_edge(record)
        return clone

    def without_edges(self, dropped: Iterable[int], graph_id: Optional[str] = None) -> "ProvenanceGraph":
        """指定エッジを除いた新しいグラフ (ノード集合は保持)"""
        dropped_set = set(dropped)
        clone = ProvenanceGraph(self.graph_id if graph_id is None else graph_id)
        for node_id, node_type in zip(self.node_ids, self.node_types):
            clone.add_node(node_id, node_type)
        for edge_id in range(self.num_edges):
            if edge_id not in dropped_set:
                clone.add_edge(self.edge_record(edge_id))
        return clone

    def __repr__(self) -> str:
        return f"ProvenanceGraph(id={self.graph_id!r}, nodes={self.num_nodes}, edges={self.num_edges})"


# ===== サブグラフ =====

@dataclass(frozen=True)
class Subgraph:
    """メモリ上のサブグラフ (active ノード + related 文脈ノード + 誘導エッジ)"""
    active: FrozenSet[int]
    related: FrozenSet[int]
    edge_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    snapshot_time: int = 0

    @property
    def nodes(self) -> List[int]:
        """active ∪ related を ordinal 昇順で返す"""
        return sorted(self.active | self.related)

    @property
    def size(self) -> int:
        return len(self.active) + len(self.related)

    @classmethod
    def whole_graph(cls, graph: ProvenanceGraph) -> "Subgraph":
        """全ノードを active とするサブグラフ"""
        return cls(
            active=frozenset(range(graph.num_nodes)),
            related=frozenset(),
            edge_ids=np.arange(graph.num_edges, dtype=np.int64),
            snapshot_time=graph.timestamps[-1] if graph.timestamps else 0,
        )


@dataclass
class LabeledGraph:
    """評価用のラベル付きグラフ"""
    graph: ProvenanceGraph
    is_attack: bool = False
    scene: str = ""
    anomalous_nodes: Set[str] = field(default_factory=set)

    @property
    def graph_id(self) -> str:
        return self.graph.graph_id
