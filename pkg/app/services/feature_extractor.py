"""
🛡️ 特徴量抽出エンジン
ノードのラベル (型クラス) と入出力エッジ型ヒストグラムを作る

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Iterable, Optional, Sequence, Set
from collections import Counter, defaultdict
import logging

import numpy as np

from app.models.errors import UnknownType
from app.models.feature_types import FeatureTable, TypeMaps
from app.models.provenance_graph import ProvenanceGraph, Subgraph
from app.models.detector_config import UnknownTypePolicy


logger = logging.getLogger(__name__)


class IncrementalFeatureCounter:
    """ノードごとのエッジ型カウンタ (ordinal → Counter)"""

    def __init__(self):
        self.in_counts: Dict[int, Counter] = defaultdict(Counter)
        self.out_counts: Dict[int, Counter] = defaultdict(Counter)

    def add(self, ordinal: int, edge_type: str, count: int = 1, incoming: bool = False) -> None:
        (self.in_counts if incoming else self.out_counts)[ordinal][edge_type] += count

    def observe(self, src: int, dst: int, edge_type: str) -> None:
        """1エッジにつき2カウンタを加算"""
        self.add(src, edge_type, incoming=False)
        self.add(dst, edge_type, incoming=True)

    def vector(self, ordinal: int, maps: TypeMaps) -> np.ndarray:
        """未知のエッジ型は数えない"""
        n_e = maps.n_edge_types
        vector = np.zeros(2 * n_e, dtype=np.int64)
        for edge_type, count in self.in_counts.get(ordinal, {}).items():
            index = maps.edge_type_map.get(edge_type)
            if index is not None:
                vector[index] += count
        for edge_type, count in self.out_counts.get(ordinal, {}).items():
            index = maps.edge_type_map.get(edge_type)
            if index is not None:
                vector[n_e + index] += count
        return vector

    def unseen_edge_types(self, ordinal: int, maps: TypeMaps) -> Set[str]:
        seen = set(self.in_counts.get(ordinal, {})) | set(self.out_counts.get(ordinal, {}))
        return {t for t in seen if t not in maps.edge_type_map}


class FeatureExtractor:
    """型マップ構築と特徴量計算"""

    # ===== 型マップ =====

    def build_type_maps(self, graphs: Sequence[ProvenanceGraph]) -> TypeMaps:
        """edge_id 順の走査で初出順に整数を割り当てる"""
        maps = TypeMaps()
        for graph in graphs:
            for edge_id in range(graph.num_edges):
                src = graph.edge_src[edge_id]
                dst = graph.edge_dst[edge_id]
                maps.register_node_type(graph.node_types[src])
                maps.register_node_type(graph.node_types[dst])
                maps.register_edge_type(graph.edge_types[edge_id])
            # エッジを持たないノード
            for node_type in graph.node_types:
                maps.register_node_type(node_type)
        logger.info("type maps built: N_n=%d N_e=%d", maps.n_node_types, maps.n_edge_types)
        return maps.freeze()

    # ===== 特徴量 =====

    def extract_features(
        self,
        graph: ProvenanceGraph,
        maps: TypeMaps,
        subgraph: Optional[Subgraph] = None,
        policy: UnknownTypePolicy = UnknownTypePolicy.ERROR,
    ) -> FeatureTable:
        """サブグラフ (省略時はグラフ全体) のエッジだけで数えた特徴量表"""
        if subgraph is None:
            nodes = np.arange(graph.num_nodes, dtype=np.int64)
            edge_ids = np.arange(graph.num_edges, dtype=np.int64)
        else:
            nodes = np.array(subgraph.nodes, dtype=np.int64)
            edge_ids = subgraph.edge_ids

        n_e = maps.n_edge_types
        unknown: Set[int] = set()

        labels = np.empty(len(nodes), dtype=np.int64)
        for row, ordinal in enumerate(nodes.tolist()):
            node_type = graph.node_types[ordinal]
            label = maps.node_type_map.get(node_type)
            if label is None:
                if policy is UnknownTypePolicy.ERROR:
                    raise UnknownType("node", node_type)
                unknown.add(ordinal)
                label = -1
            labels[row] = label

        vectors = np.zeros((len(nodes), 2 * n_e), dtype=np.int64)
        if len(edge_ids):
            src = np.asarray(graph.edge_src, dtype=np.int64)[edge_ids]
            dst = np.asarray(graph.edge_dst, dtype=np.int64)[edge_ids]
            types = np.array([maps.edge_type_map.get(graph.edge_types[e], -1) for e in edge_ids.tolist()],
                             dtype=np.int64)

            missing = types < 0
            if missing.any():
                if policy is UnknownTypePolicy.ERROR:
                    raise UnknownType("edge", graph.edge_types[int(edge_ids[np.argmax(missing)])])
                if policy is UnknownTypePolicy.FLAG:
                    unknown.update(src[missing].tolist())
                    unknown.update(dst[missing].tolist())
                logger.warning("%d edges with unseen types in graph %r", int(missing.sum()), graph.graph_id)

            known = ~missing
            src_rows = np.searchsorted(nodes, src[known])
            dst_rows = np.searchsorted(nodes, dst[known])
            np.add.at(vectors, (dst_rows, types[known]), 1)
            np.add.at(vectors, (src_rows, n_e + types[known]), 1)

        if unknown and policy is not UnknownTypePolicy.ERROR:
            logger.warning("%d nodes touch unseen types", len(unknown))
        return FeatureTable(nodes, labels, vectors, unknown)

    def features_from_counter(
        self,
        graph: ProvenanceGraph,
        maps: TypeMaps,
        counter: IncrementalFeatureCounter,
        subgraph: Subgraph,
        policy: UnknownTypePolicy = UnknownTypePolicy.FLAG,
    ) -> FeatureTable:
        """全履歴カウンタから作る特徴量表 (feature_scope=history)"""
        nodes = np.array(subgraph.nodes, dtype=np.int64)
        labels = np.empty(len(nodes), dtype=np.int64)
        vectors = np.zeros((len(nodes), maps.feature_width), dtype=np.int64)
        unknown: Set[int] = set()
        for row, ordinal in enumerate(nodes.tolist()):
            node_type = graph.node_types[ordinal]
            label = maps.node_type_map.get(node_type, -1)
            unseen = counter.unseen_edge_types(ordinal, maps)
            if (label < 0 or unseen) and policy is UnknownTypePolicy.ERROR:
                raise UnknownType("node", node_type) if label < 0 else UnknownType("edge", sorted(unseen)[0])
            if label < 0 or (unseen and policy is UnknownTypePolicy.FLAG):
                unknown.add(ordinal)
            labels[row] = label
            vectors[row] = counter.vector(ordinal, maps)
        return FeatureTable(nodes, labels, vectors, unknown)

    # ===== デバッグ出力 =====

    def dump_features(self, table: FeatureTable, graph: ProvenanceGraph, path: str) -> None:
        """node_id<TAB>label<TAB>v0,v1,... を1行1ノードで書く"""
        with open(path, "w", encoding="utf-8") as fh:
            for row, ordinal in enumerate(table.nodes.tolist()):
                vector = ",".join(str(int(c)) for c in table.vectors[row])
                fh.write(f"{graph.node_ids[ordinal]}\t{int(table.labels[row])}\t{vector}\n")


# グローバルインスタンス
feature_extractor = FeatureExtractor()
