"""
🛡️ マルチモデルエンジン
積層サブモデルの学習 (全訓練ノードが確信分類されるまで追加) と実行 (全サブモデルを生き残ったノードが異常)

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Iterable, Optional, Sequence, Set, Tuple
from collections import defaultdict
import logging

import numpy as np
from tqdm import tqdm

from app.models.errors import StallDetected
from app.models.feature_types import FeatureTable, TypeMaps
from app.models.provenance_graph import ProvenanceGraph, Subgraph
from app.models.role_model import (
    DetectionResult, Ensemble, NodeDiagnostics, Submodel, SubmodelRecord, TrainingReport
)
from app.models.detector_config import DetectorConfig, FeatureScope, UnknownTypePolicy, default_config
from app.services.feature_extractor import FeatureExtractor, feature_extractor
from app.services.graph_store import build_training_subgraphs, context_subgraph
from app.services.graphsage import GraphSAGEEngine, GraphView, accept_mask, confidence_ratio, graphsage_engine
from app.utils.logging_setup import progress_disabled


logger = logging.getLogger(__name__)


class MultiModelEngine:
    """積層マルチモデルの学習と検知"""

    def __init__(self, gnn: GraphSAGEEngine = graphsage_engine, extractor: FeatureExtractor = feature_extractor):
        self.gnn = gnn
        self.extractor = extractor

    # ===== 判定 =====

    def accepted_rows(self, view: GraphView, submodel: Submodel, rows: np.ndarray,
                      ratio_threshold: float) -> Tuple[np.ndarray, np.ndarray]:
        """rows のうち確信分類された行と、その確率行列"""
        rows = np.asarray(rows, dtype=np.int64)
        probs = self.gnn.predict_proba(view, submodel, rows)
        mask = accept_mask(probs, view.labels[rows], ratio_threshold)
        return rows[mask], probs

    def covered(self, view: GraphView, rows: np.ndarray, ensemble: Ensemble) -> np.ndarray:
        """いずれかのサブモデルが受理した行"""
        remaining = np.asarray(rows, dtype=np.int64)
        accepted: List[np.ndarray] = []
        for submodel in ensemble.submodels:
            if len(remaining) == 0:
                break
            hit, _ = self.accepted_rows(view, submodel, remaining, ensemble.ratio_threshold)
            accepted.append(hit)
            remaining = np.setdiff1d(remaining, hit)
        return np.concatenate(accepted) if accepted else np.zeros(0, dtype=np.int64)

    # ===== 学習 =====

    def train_ensemble(
        self,
        graph: ProvenanceGraph,
        subgraph: Subgraph,
        table: FeatureTable,
        ensemble: Ensemble,
        config: DetectorConfig = default_config,
        report: Optional[TrainingReport] = None,
    ) -> Ensemble:
        """subgraph の active ノードが全て受理されるまでサブモデルを追加する"""
        report = report if report is not None else TrainingReport()
        view = self.gnn.prepare(graph, subgraph, table)
        active_rows = view.rows_of(sorted(subgraph.active))
        targets = active_rows[view.labels[active_rows] >= 0]

        # 既存サブモデルで受理済みのノードを除く
        if ensemble.cnt:
            before = len(targets)
            targets = np.setdiff1d(targets, self.covered(view, targets, ensemble))
            report.prefiltered += before - len(targets)
        if len(targets) == 0:
            logger.info("all %d active nodes already covered; nothing to train", len(active_rows))
            return ensemble

        fingerprint = ensemble.maps.fingerprint()
        stalls = 0
        attempt = 0
        while len(targets):
            index = len(report.records)
            submodel, history = self.gnn.train_submodel(
                view, targets, ensemble.maps.n_node_types, config,
                seed=[config.seed, ensemble.cnt, attempt], maps_fingerprint=fingerprint,
            )
            attempt += 1
            hit, _ = self.accepted_rows(view, submodel, targets, ensemble.ratio_threshold)
            kept = len(hit) > 0
            report.records.append(SubmodelRecord(index, len(targets), len(hit), history[-1], kept))
            logger.info("submodel %d: |X|=%d accepted=%d loss=%.4f%s", index, len(targets), len(hit),
                        history[-1], "" if kept else " (discarded)")

            if kept:
                ensemble.append(submodel)
                targets = np.setdiff1d(targets, hit)
                stalls = 0
                continue

            stalls += 1
            if stalls >= config.stall_patience:
                stuck = [graph.node_ids[int(view.nodes[r])] for r in targets]
                if config.raise_on_stall:
                    raise StallDetected(stuck, config.stall_patience)
                causes = self.stall_causes(graph, view, targets)
                report.unlearnable.update(causes)
                logger.warning("stall guard: %d nodes moved to the unlearnable report", len(stuck))
                break
        return ensemble

    def stall_causes(self, graph: ProvenanceGraph, view: GraphView, rows: np.ndarray) -> Dict[str, str]:
        """学習できなかったノードの原因 (同一特徴量で別ラベルのノードがあるか)"""
        by_vector: Dict[bytes, List[int]] = defaultdict(list)
        for row in range(len(view.nodes)):
            if view.labels[row] >= 0:
                by_vector[view.features[row].tobytes()].append(row)

        causes: Dict[str, str] = {}
        for row in rows:
            node_id = graph.node_ids[int(view.nodes[row])]
            clash = [r for r in by_vector[view.features[row].tobytes()] if view.labels[r] != view.labels[row]]
            if clash:
                other = int(view.nodes[clash[0]])
                causes[node_id] = (f"feature collision with {graph.node_ids[other]!r} "
                                   f"({graph.node_types[other]})")
            else:
                causes[node_id] = "no confident fit"
        return causes

    def train_on_graph_sequence(
        self,
        graphs: Sequence[ProvenanceGraph],
        config: DetectorConfig = default_config,
        maps: Optional[TypeMaps] = None,
    ) -> Tuple[Ensemble, TrainingReport]:
        """グラフ列を順に学習する (全ノード受理済みのグラフは使わない)"""
        if not graphs:
            raise ValueError("at least one training graph is required")
        maps = maps if maps is not None else self.extractor.build_type_maps(graphs)
        ensemble = Ensemble(maps, config.ratio_threshold)
        report = TrainingReport()

        for graph in tqdm(graphs, desc="graphs", disable=progress_disabled()):
            if graph.num_nodes == 0:
                report.skipped_graphs.append(graph.graph_id)
                continue
            table = self.extractor.extract_features(graph, maps)
            if ensemble.cnt and not self.rejects_any(graph, table, ensemble):
                logger.info("graph %r already covered; skipped", graph.graph_id)
                report.skipped_graphs.append(graph.graph_id)
                continue

            for subgraph in build_training_subgraphs(graph, config.split_size, config.seed, config.hops):
                scoped = self.scoped_features(graph, maps, subgraph, config, table)
                self.train_ensemble(graph, subgraph, scoped, ensemble, config, report)
            report.trained_graphs.append(graph.graph_id)

        logger.info("training finished: cnt=%d unlearnable=%d", ensemble.cnt, len(report.unlearnable))
        return ensemble, report

    def scoped_features(
        self,
        graph: ProvenanceGraph,
        maps: TypeMaps,
        subgraph: Subgraph,
        config: DetectorConfig = default_config,
        whole: Optional[FeatureTable] = None,
    ) -> FeatureTable:
        """検知時と同じ feature_scope で数えた学習用特徴量 (subgraph はサブグラフ内エッジのみ)"""
        if config.feature_scope is FeatureScope.HISTORY:
            whole = whole if whole is not None else self.extractor.extract_features(graph, maps)
            return whole.restrict(subgraph.nodes)
        return self.extractor.extract_features(graph, maps, subgraph)

    def rejects_any(self, graph: ProvenanceGraph, table: FeatureTable, ensemble: Ensemble) -> bool:
        whole = Subgraph.whole_graph(graph)
        view = self.gnn.prepare(graph, whole, table)
        rows = np.flatnonzero(view.labels >= 0)
        return len(self.covered(view, rows, ensemble)) < len(rows)

    def absorb_false_positives(
        self,
        ensemble: Ensemble,
        graph: ProvenanceGraph,
        node_ids: Iterable[str],
        config: DetectorConfig = default_config,
        report: Optional[TrainingReport] = None,
    ) -> Ensemble:
        """管理者が良性と判断したノードを追加サブモデルで学習する (既存サブモデルは変更しない)"""
        active = [graph.ordinal(node_id) for node_id in node_ids]
        if not active:
            return ensemble
        subgraph = context_subgraph(graph, active, config.hops, graph.timestamps[-1] if graph.timestamps else 0)
        table = self.scoped_features(graph, ensemble.maps, subgraph, config)
        return self.train_ensemble(graph, subgraph, table, ensemble, config, report)

    # ===== 検知 =====

    def detect(
        self,
        graph: ProvenanceGraph,
        subgraph: Subgraph,
        table: FeatureTable,
        candidates: Iterable[int],
        ensemble: Ensemble,
        policy: UnknownTypePolicy = UnknownTypePolicy.FLAG,
    ) -> DetectionResult:
        """全サブモデルに受理されなかった候補ノードを異常とする"""
        candidates = sorted(set(int(c) for c in candidates))
        result = DetectionResult()
        if not candidates:
            return result

        unknown = [c for c in candidates if c in table.unknown]
        if policy is UnknownTypePolicy.FLAG:
            for c in unknown:
                result.anomalous.add(c)
                result.diagnostics[c] = NodeDiagnostics(best_class=-1, ratio=float("nan"), reason="unknown type")
        else:
            result.excluded.update(unknown)
        known = [c for c in candidates if c not in table.unknown]
        if not known:
            return result

        view = self.gnn.prepare(graph, subgraph, table)
        remaining = view.rows_of(known)
        rows_seen: Dict[int, List[np.ndarray]] = defaultdict(list)
        for submodel in ensemble.submodels:
            if len(remaining) == 0:
                break
            hit, probs = self.accepted_rows(view, submodel, remaining, ensemble.ratio_threshold)
            for row, prob in zip(remaining.tolist(), probs):
                rows_seen[row].append(prob)
            remaining = np.setdiff1d(remaining, hit)

        accepted = set(view.rows_of(known).tolist()) - set(remaining.tolist())
        result.benign.update(int(view.nodes[r]) for r in accepted)
        for row in remaining.tolist():
            ordinal = int(view.nodes[row])
            result.anomalous.add(ordinal)
            result.diagnostics[ordinal] = self._diagnose(rows_seen[row], int(view.labels[row]))
        return result

    def _diagnose(self, probs: List[np.ndarray], label: int) -> NodeDiagnostics:
        if not probs:
            return NodeDiagnostics(best_class=-1, ratio=float("nan"), reason="no submodels")
        stacked = np.vstack(probs)
        ratios = confidence_ratio(stacked)
        best = int(np.argmax(stacked[:, label]))
        return NodeDiagnostics(
            best_class=int(np.argmax(stacked[best])),
            ratio=float(ratios[best]),
            margins=[float(r) for r in ratios],
            rows=[p.copy() for p in probs],
        )

    def detect_graph(self, graph: ProvenanceGraph, ensemble: Ensemble,
                     policy: UnknownTypePolicy = UnknownTypePolicy.FLAG) -> DetectionResult:
        """グラフ全体を1スナップショットとして全ノードを検知する"""
        whole = Subgraph.whole_graph(graph)
        table = self.extractor.extract_features(graph, ensemble.maps, whole, policy)
        return self.detect(graph, whole, table, whole.active, ensemble, policy)


# グローバルインスタンス
multi_model_engine = MultiModelEngine()
