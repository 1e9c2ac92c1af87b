"""
🛡️ 回避攻撃ハーネス
L2 予算内で異常ノードの特徴量を摂動し、エッジ編集として実現し、検知性能の劣化を測る

攻撃の種類:
    train-data       最も近い同クラスの良性訓練特徴量へ寄せる
    model            第1サブモデルの損失に対する射影勾配降下
    model+neighbors  攻撃ノードと良性隣接ノードの損失和に対する射影勾配降下

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Any, Callable, Iterable, Optional, Sequence, Set, Tuple
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
import itertools
import logging
import math

import numpy as np
import pandas as pd
import scipy.sparse as sp

from app.models.confusion import ConfusionCounts
from app.models.errors import EmptyClass, InfeasibleBudget, NegativeCount
from app.models.feature_types import FeatureTable, TypeMaps, swap_direction
from app.models.provenance_graph import EdgeRecord, LabeledGraph, ProvenanceGraph, Subgraph
from app.models.role_model import Ensemble, Submodel
from app.models.detector_config import DetectorConfig, default_config
from app.services.alert_tracer import AlertTracer, alert_tracer
from app.services.evaluation_harness import metrics
from app.services.feature_extractor import FeatureExtractor, feature_extractor
from app.services.graphsage import GraphSAGEEngine, GraphView, graphsage_engine
from app.services.multi_model import MultiModelEngine, multi_model_engine


logger = logging.getLogger(__name__)

PEER_PREFIX = "attacker-peer-"


class AttackKind(Enum):
    TRAINING_DATA = "train-data"
    MODEL = "model"
    MODEL_NEIGHBORS = "model+neighbors"


class AttackFlag(Enum):
    NONE = "none"
    INFEASIBLE_BUDGET = "infeasible_budget"   # 球内に x 以外の整数点が無い
    NO_IMPROVEMENT = "no_improvement"         # 損失が下がらなかったので x を返した


@dataclass
class AttackResult:
    x: np.ndarray
    x_hat: np.ndarray
    kind: AttackKind
    delta: float
    flag: AttackFlag = AttackFlag.NONE
    loss_before: Optional[float] = None
    loss_after: Optional[float] = None
    reference: Optional[np.ndarray] = None     # train-data 攻撃の x_b
    steps: List[np.ndarray] = field(default_factory=list)

    @property
    def changed(self) -> bool:
        return not np.array_equal(self.x, self.x_hat)

    def within_budget(self) -> bool:
        distance = float(np.linalg.norm(self.x_hat - self.x))
        return distance < self.delta * float(np.linalg.norm(self.x)) or not self.changed

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "delta_a": self.delta,
            "flag": self.flag.value,
            "x": self.x.tolist(),
            "x_hat": self.x_hat.tolist(),
            "reference": None if self.reference is None else self.reference.tolist(),
            "loss_before": self.loss_before,
            "loss_after": self.loss_after,
            "steps": len(self.steps),
        }


@dataclass
class AttackContext:
    """攻撃ノード周辺の局所問題 (行 row が攻撃ノード)"""
    adjacency: sp.csr_matrix
    features: np.ndarray
    row: int = 0
    neighbor_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    neighbor_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def isolated(cls, x: np.ndarray) -> "AttackContext":
        return cls(sp.csr_matrix((1, 1)), np.asarray(x, dtype=np.float64)[None, :].copy())


@dataclass
class EdgeEdit:
    action: str                      # "add" | "remove"
    record: EdgeRecord
    edge_id: Optional[int] = None    # 削除対象のエッジ


def couple_neighbors(x: np.ndarray, x_hat: np.ndarray, neighbor_features: np.ndarray) -> np.ndarray:
    """攻撃ノードの編集を隣接ノード側のカウンタ変化として配分する

    入出力スロットを入れ替えた整数の変化量を m 個の近傍へ floor(Δ/m) ずつ配り、
    余りは先頭の近傍から1ずつ足す (近傍の合計は Δ に一致し、各近傍の変化は整数)。
    """
    neighbor_features = np.atleast_2d(np.asarray(neighbor_features, dtype=np.float64))
    m = len(neighbor_features)
    if m == 0:
        return neighbor_features
    change = np.rint(np.asarray(x_hat, dtype=np.float64) - np.asarray(x, dtype=np.float64)).astype(np.int64)
    change = swap_direction(change)
    base = np.floor_divide(change, m)
    remainder = change - base * m
    shares = np.repeat(base[None, :], m, axis=0) + (np.arange(m)[:, None] < remainder[None, :])
    return neighbor_features + shares


class EvasionAttackEngine:
    """特徴空間での回避攻撃"""

    def __init__(
        self,
        gnn: GraphSAGEEngine = graphsage_engine,
        engine: MultiModelEngine = multi_model_engine,
        extractor: FeatureExtractor = feature_extractor,
        tracer: AlertTracer = alert_tracer,
    ):
        self.gnn = gnn
        self.engine = engine
        self.extractor = extractor
        self.tracer = tracer

    # ===== 整数格子 =====

    @staticmethod
    def _radius(x: np.ndarray, delta: float) -> float:
        if delta < 0:
            raise ValueError("delta_a must be >= 0")
        return delta * float(np.linalg.norm(x))

    @staticmethod
    def ball_lattice(x: np.ndarray, radius: float, limit: int) -> Optional[np.ndarray]:
        """‖p - x‖ < radius を満たす非負整数点 (箱の大きさが limit を超えたら None)"""
        ranges = []
        size = 1
        for xi in x.tolist():
            lo = max(0, math.ceil(xi - radius))
            hi = math.floor(xi + radius)
            ranges.append(range(lo, hi + 1))
            size *= len(ranges[-1])
            if size > limit:
                return None
        points = np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, len(x))
        inside = np.linalg.norm(points - x[None, :], axis=1) < radius
        return points[inside]

    @staticmethod
    def _back_off(candidate: np.ndarray, x: np.ndarray, radius: float) -> np.ndarray:
        """最大の変化量から1ずつ戻して予算内に入れる"""
        candidate = candidate.copy()
        while np.linalg.norm(candidate - x) >= radius:
            diff = candidate - x
            i = int(np.argmax(np.abs(diff)))
            candidate[i] -= np.sign(diff[i])
        return candidate

    @staticmethod
    def _refine(candidate: np.ndarray, x: np.ndarray, radius: float,
                objective: Callable[[np.ndarray], float], max_rounds: int = 200) -> np.ndarray:
        """±1 の貪欲な局所探索"""
        best = candidate.copy()
        best_value = objective(best)
        for _ in range(max_rounds):
            improved = False
            for i in range(len(best)):
                for step in (1, -1):
                    trial = best.copy()
                    trial[i] += step
                    if trial[i] < 0 or np.linalg.norm(trial - x) >= radius:
                        continue
                    value = objective(trial)
                    if value < best_value - 1e-12:
                        best, best_value, improved = trial, value, True
            if not improved:
                break
        return best

    def _integer_minimum(self, start: np.ndarray, x: np.ndarray, radius: float,
                         objective: Callable[[np.ndarray], float], config: DetectorConfig) -> np.ndarray:
        """連続解 start を半切り上げで非負整数へ丸め、予算を超えたら x 側へ戻し、±1 の局所探索で仕上げる

        exhaustive_search が有効で箱が exhaustive_limit 点以下なら、球内の格子点を全探索する。
        """
        if config.exhaustive_search:
            lattice = self.ball_lattice(x, radius, config.exhaustive_limit)
            if lattice is not None:
                values = np.array([objective(p) for p in lattice])
                return lattice[int(np.argmin(values))]
        candidate = np.maximum(np.floor(start + 0.5), 0).astype(np.int64)
        candidate = self._back_off(candidate, x, radius)
        return self._refine(candidate, x, radius, objective)

    # ===== 訓練データ知識による攻撃 =====

    def attack_with_training_data(
        self,
        x: np.ndarray,
        label: int,
        training: FeatureTable,
        delta: float,
        config: DetectorConfig = default_config,
        strict: bool = False,
    ) -> AttackResult:
        """最も近い同クラス良性特徴量 x_b に、予算内で最も近い整数点"""
        x = np.asarray(x, dtype=np.int64)
        same = np.flatnonzero(training.labels == label)
        if len(same) == 0:
            raise EmptyClass(f"no benign training sample of class {label}")
        candidates = training.vectors[same]
        distances = np.linalg.norm(candidates - x[None, :], axis=1)
        x_b = candidates[int(np.argmin(distances))].astype(np.int64)

        radius = self._radius(x, delta)
        result = AttackResult(x, x.copy(), AttackKind.TRAINING_DATA, delta, reference=x_b)
        if radius <= 1.0:
            return self._infeasible(result, strict)
        if np.linalg.norm(x_b - x) < radius:
            result.x_hat = x_b.copy()
            return result

        objective = lambda p: float(np.linalg.norm(p - x_b))
        direction = (x_b - x).astype(np.float64)
        start = x + direction * (radius * (1 - 1e-9) / np.linalg.norm(direction))
        result.x_hat = self._integer_minimum(start, x, radius, objective, config)
        return result

    def _infeasible(self, result: AttackResult, strict: bool) -> AttackResult:
        if strict:
            raise InfeasibleBudget(f"no integer point other than x within delta_a={result.delta}")
        result.flag = AttackFlag.INFEASIBLE_BUDGET
        return result

    # ===== モデル知識による攻撃 =====

    def _objective(self, submodel: Submodel, context: AttackContext, x: np.ndarray, label: int,
                   with_neighbors: bool) -> Tuple[Callable[[np.ndarray], float], Callable[[np.ndarray], Tuple[float, np.ndarray]]]:
        rows = np.concatenate([[context.row], context.neighbor_rows]).astype(np.int64) if with_neighbors \
            else np.array([context.row], dtype=np.int64)
        labels = np.concatenate([[label], context.neighbor_labels]).astype(np.int64) if with_neighbors \
            else np.array([label], dtype=np.int64)
        neighbors = context.neighbor_rows if with_neighbors else np.zeros(0, dtype=np.int64)
        base = context.features

        def features_at(point: np.ndarray) -> np.ndarray:
            features = base.copy()
            features[context.row] = point
            if len(neighbors):
                features[neighbors] = couple_neighbors(x, point, base[neighbors])
            return features

        def value(point: np.ndarray) -> float:
            return self.gnn.loss(context.adjacency, features_at(point), submodel, rows, labels, reduction="sum")

        def gradient(point: np.ndarray) -> Tuple[float, np.ndarray]:
            loss, d_features = self.gnn.input_gradient(context.adjacency, features_at(point), submodel, rows, labels)
            grad = d_features[context.row].copy()
            if len(neighbors):
                # 配分の連続近似 (1/m ずつ)
                grad += swap_direction(d_features[neighbors].sum(axis=0)) / len(neighbors)
            return loss, grad

        return value, gradient

    def _projected_descent(
        self,
        x: np.ndarray,
        label: int,
        submodel: Submodel,
        context: AttackContext,
        delta: float,
        steps: int,
        kind: AttackKind,
        config: DetectorConfig,
        strict: bool,
    ) -> AttackResult:
        x = np.asarray(x, dtype=np.int64)
        x0 = x.astype(np.float64)
        with_neighbors = kind is AttackKind.MODEL_NEIGHBORS and len(context.neighbor_rows) > 0
        value, gradient = self._objective(submodel, context, x0, label, with_neighbors)

        result = AttackResult(x, x.copy(), kind, delta)
        result.loss_before = value(x0)
        radius = self._radius(x, delta)
        if radius <= 1.0:
            result.loss_after = result.loss_before
            return self._infeasible(result, strict)

        step_size = radius / steps
        current = x0.copy()
        for _ in range(steps):
            _, grad = gradient(current)
            norm = float(np.linalg.norm(grad))
            if norm == 0.0:
                break
            current = np.maximum(current - step_size * grad / norm, 0.0)
            offset = current - x0
            distance = float(np.linalg.norm(offset))
            if distance >= radius:
                current = x0 + offset * (radius * (1 - 1e-9) / distance)
            result.steps.append(current.copy())

        candidate = self._integer_minimum(current, x, radius, lambda p: value(p.astype(np.float64)),
                                          config)
        candidate_loss = value(candidate.astype(np.float64))
        if candidate_loss >= result.loss_before - 1e-12 or np.array_equal(candidate, x):
            result.flag = AttackFlag.NO_IMPROVEMENT
            result.loss_after = result.loss_before
            return result
        result.x_hat = candidate
        result.loss_after = candidate_loss
        return result

    def attack_with_model(
        self,
        x: np.ndarray,
        label: int,
        submodel: Submodel,
        delta: float,
        steps: Optional[int] = None,
        context: Optional[AttackContext] = None,
        config: DetectorConfig = default_config,
        strict: bool = False,
    ) -> AttackResult:
        """第1サブモデルの交差エントロピーを下げる方向への射影勾配降下"""
        context = context if context is not None else AttackContext.isolated(x)
        return self._projected_descent(x, label, submodel, context, delta, steps or config.attack_steps,
                                       AttackKind.MODEL, config, strict)

    def attack_with_neighbors(
        self,
        x: np.ndarray,
        label: int,
        submodel: Submodel,
        context: AttackContext,
        delta: float,
        steps: Optional[int] = None,
        config: DetectorConfig = default_config,
        strict: bool = False,
    ) -> AttackResult:
        """攻撃ノードと良性隣接ノードの損失和を下げる (予算は攻撃ノードのみ)"""
        return self._projected_descent(x, label, submodel, context, delta, steps or config.attack_steps,
                                       AttackKind.MODEL_NEIGHBORS, config, strict)

    def context_for(self, view: GraphView, row: int, neighbor_rows: Iterable[int], hops: int) -> AttackContext:
        """ビューから攻撃ノードと隣接ノードの受容野だけを切り出す"""
        neighbor_rows = np.array(sorted(set(int(r) for r in neighbor_rows) - {row}), dtype=np.int64)
        rows = np.concatenate([[row], neighbor_rows]).astype(np.int64)
        local = self.gnn.local_problem(view, rows, hops)
        return AttackContext(
            local.adjacency,
            local.features.copy(),
            int(local.rows[0]),
            local.rows[1:].astype(np.int64),
            view.labels[neighbor_rows].astype(np.int64),
        )

    # ===== 実現 =====

    def _peer(self, graph: ProvenanceGraph, edge_type: str, incoming: bool, fallback_type: str,
              config: DetectorConfig, peers: Dict[Tuple[str, bool], Tuple[str, str]]) -> Tuple[str, str]:
        key = (edge_type, incoming)
        if key in peers:
            return peers[key]
        peer_type = config.peer_node_types.get(edge_type)
        if peer_type is None:
            counterpart = Counter(
                graph.node_types[graph.edge_src[e] if incoming else graph.edge_dst[e]]
                for e in range(graph.num_edges) if graph.edge_types[e] == edge_type
            )
            peer_type = counterpart.most_common(1)[0][0] if counterpart else fallback_type
        used = {pid for pid, _ in peers.values()}
        index = 0
        while graph.has_node(f"{PEER_PREFIX}{index}") or f"{PEER_PREFIX}{index}" in used:
            index += 1
        peers[key] = (f"{PEER_PREFIX}{index}", peer_type)
        return peers[key]

    def realize_perturbation(
        self,
        graph: ProvenanceGraph,
        node_id: str,
        x: np.ndarray,
        x_hat: np.ndarray,
        maps: TypeMaps,
        config: DetectorConfig = default_config,
        reserved: Optional[Set[int]] = None,
        peers: Optional[Dict[Tuple[str, bool], Tuple[str, str]]] = None,
        protected: Iterable[str] = (),
    ) -> List[EdgeEdit]:
        """特徴量を x から x_hat へ変えるエッジの追加・削除

        protected のノードとのエッジは最後に削除候補とし、削除した場合は
        相手側にピアとの同種エッジを足して相手の特徴量を保つ。
        """
        x = np.asarray(x, dtype=np.int64)
        x_hat = np.asarray(x_hat, dtype=np.int64)
        if (x_hat < 0).any():
            raise NegativeCount(f"x_hat for {node_id!r} has negative counts")
        reserved = reserved if reserved is not None else set()
        peers = peers if peers is not None else {}
        guarded = {graph.ordinal(n) for n in protected if graph.has_node(n) and n != node_id}

        ordinal = graph.ordinal(node_id)
        node_type = graph.node_types[ordinal]
        names = maps.edge_type_names()
        n_e = maps.n_edge_types
        edits: List[EdgeEdit] = []

        for i, change in enumerate((x_hat - x).tolist()):
            if change == 0:
                continue
            incoming = i < n_e
            edge_type = names[i % n_e]
            if change > 0:
                peer_id, peer_type = self._peer(graph, edge_type, incoming, node_type, config, peers)
                for _ in range(change):
                    if incoming:
                        record = EdgeRecord(peer_id, peer_type, node_id, node_type, edge_type)
                    else:
                        record = EdgeRecord(node_id, node_type, peer_id, peer_type, edge_type)
                    edits.append(EdgeEdit("add", record))
                continue

            pool = graph.in_edges[ordinal] if incoming else graph.out_edges[ordinal]
            other = graph.edge_src if incoming else graph.edge_dst
            # 末尾から削除する: protected 側のエッジは先頭へ
            removable = sorted(
                (e for e in pool
                 if graph.edge_types[e] == edge_type and graph.edge_src[e] != graph.edge_dst[e] and e not in reserved),
                key=lambda e: (other[e] not in guarded, e),
            )
            if len(removable) < -change:
                direction = "in" if incoming else "out"
                raise NegativeCount(
                    f"{node_id!r}: cannot remove {-change} {direction}-edges of type {edge_type!r}, "
                    f"only {len(removable)} exist"
                )
            for e in removable[len(removable) + change:]:
                edits.append(EdgeEdit("remove", graph.edge_record(e), e))
                reserved.add(e)
                if other[e] in guarded:
                    edits.append(self._compensate(graph, other[e], edge_type, incoming, config, peers))
        return edits

    def _compensate(self, graph: ProvenanceGraph, ordinal: int, edge_type: str, removed_incoming: bool,
                    config: DetectorConfig, peers: Dict[Tuple[str, bool], Tuple[str, str]]) -> EdgeEdit:
        """削除で相手ノードが失う1本をピアとのエッジで補う"""
        other_id = graph.node_ids[ordinal]
        other_type = graph.node_types[ordinal]
        if removed_incoming:
            # 相手は src 側で、出エッジを1本失う
            peer_id, peer_type = self._peer(graph, edge_type, False, other_type, config, peers)
            return EdgeEdit("add", EdgeRecord(other_id, other_type, peer_id, peer_type, edge_type))
        peer_id, peer_type = self._peer(graph, edge_type, True, other_type, config, peers)
        return EdgeEdit("add", EdgeRecord(peer_id, peer_type, other_id, other_type, edge_type))

    def apply_edits(self, graph: ProvenanceGraph, edits: Sequence[EdgeEdit], graph_id: Optional[str] = None) -> ProvenanceGraph:
        """削除してから追加分を末尾へ追記した新しいグラフ"""
        removed = {e.edge_id for e in edits if e.action == "remove"}
        edited = graph.without_edges(removed, graph_id)
        timestamp = max(graph.timestamps) if graph.timestamps else 0
        for edit in edits:
            if edit.action != "add":
                continue
            timestamp += 1
            r = edit.record
            edited.add_edge(EdgeRecord(r.src_id, r.src_type, r.dst_id, r.dst_type, r.edge_type, timestamp))
        return edited

    def realize_targets(self, graph: ProvenanceGraph, targets: Dict[str, np.ndarray], maps: TypeMaps,
                        config: DetectorConfig = default_config) -> ProvenanceGraph:
        """複数ノードの目標特徴量を順に実現した新しいグラフ

        各ノードの差分は編集済みのグラフに対して計画し、実現済みのノードの特徴量は保護する。
        """
        current = graph
        peers: Dict[Tuple[str, bool], Tuple[str, str]] = {}
        realized: List[str] = []
        for node_id, x_hat in targets.items():
            table = self.extractor.extract_features(current, maps, policy=config.unknown_type_policy)
            x_now = table.vectors[table.row_of(current.ordinal(node_id))]
            if not np.array_equal(x_now, x_hat):
                edits = self.realize_perturbation(current, node_id, x_now, x_hat, maps, config,
                                                  peers=peers, protected=realized)
                current = self.apply_edits(current, edits)
            realized.append(node_id)
        return current

    # ===== 評価 =====

    def training_samples(self, graphs: Sequence[ProvenanceGraph], maps: TypeMaps) -> FeatureTable:
        """訓練グラフ全体の良性特徴量を1つの表にまとめる"""
        tables = [self.extractor.extract_features(g, maps) for g in graphs if g.num_nodes]
        if not tables:
            return FeatureTable(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, maps.feature_width), np.int64))
        labels = np.concatenate([t.labels for t in tables])
        vectors = np.vstack([t.vectors for t in tables])
        return FeatureTable(np.arange(len(labels), dtype=np.int64), labels, vectors)

    def attack_graph(
        self,
        labeled: LabeledGraph,
        ensemble: Ensemble,
        kind: AttackKind,
        delta: float,
        training: Optional[FeatureTable],
        config: DetectorConfig = default_config,
        flagged: Optional[Set[str]] = None,
    ) -> Tuple[ProvenanceGraph, List[AttackResult]]:
        """検知された異常ノードを全て攻撃し、編集後のグラフを返す"""
        graph = labeled.graph
        if flagged is None:
            baseline = self.engine.detect_graph(graph, ensemble, config.unknown_type_policy)
            flagged = {graph.node_ids[v] for v in baseline.anomalous}
        table = self.extractor.extract_features(graph, ensemble.maps, policy=config.unknown_type_policy)
        view = self.gnn.prepare(graph, Subgraph.whole_graph(graph), table)
        submodel = ensemble.submodels[0]

        results: List[AttackResult] = []
        targets: Dict[str, np.ndarray] = {}
        for node_id in sorted(flagged & labeled.anomalous_nodes):
            ordinal = graph.ordinal(node_id)
            label = int(table.labels[ordinal])
            if label < 0:
                continue
            x = table.vectors[ordinal]
            if kind is AttackKind.TRAINING_DATA:
                result = self.attack_with_training_data(x, label, training, delta, config)
            else:
                neighbors = []
                if kind is AttackKind.MODEL_NEIGHBORS:
                    neighbors = [v for v in graph.in_neighbors(ordinal) | graph.out_neighbors(ordinal)
                                 if graph.node_ids[v] not in labeled.anomalous_nodes and table.labels[v] >= 0]
                context = self.context_for(view, ordinal, neighbors, submodel.hops)
                if kind is AttackKind.MODEL:
                    result = self.attack_with_model(x, label, submodel, delta, context=context, config=config)
                else:
                    result = self.attack_with_neighbors(x, label, submodel, context, delta, config=config)
            results.append(result)
            targets[node_id] = result.x_hat
        return self.realize_targets(graph, targets, ensemble.maps, config), results

    def evaluate_evasion(
        self,
        ensemble: Ensemble,
        test_graphs: Sequence[LabeledGraph],
        deltas: Sequence[float],
        kinds: Sequence[AttackKind],
        training: Optional[FeatureTable] = None,
        config: DetectorConfig = default_config,
    ) -> pd.DataFrame:
        """δ_a ごとの FNR などを表にする (δ_a = 0 はベースラインそのもの)"""
        policy = config.unknown_type_policy
        baselines = []
        for labeled in test_graphs:
            result = self.engine.detect_graph(labeled.graph, ensemble, policy)
            baselines.append({labeled.graph.node_ids[v] for v in result.anomalous})

        rows: List[Dict[str, Any]] = []
        for kind in kinds:
            if kind is AttackKind.TRAINING_DATA and training is None:
                raise ValueError("training-data attack requires training samples")
            for delta in deltas:
                counts = ConfusionCounts()
                attacked = infeasible = unimproved = 0
                for labeled, flagged in zip(test_graphs, baselines):
                    universe = list(labeled.graph.node_ids)
                    if delta == 0:
                        counts = counts + self.tracer.score_node_level(
                            labeled.graph, labeled.anomalous_nodes, flagged, hop_credit=False, universe=universe)
                        continue
                    edited, results = self.attack_graph(labeled, ensemble, kind, delta, training, config, flagged)
                    attacked += len(results)
                    infeasible += sum(r.flag is AttackFlag.INFEASIBLE_BUDGET for r in results)
                    unimproved += sum(r.flag is AttackFlag.NO_IMPROVEMENT for r in results)
                    after = self.engine.detect_graph(edited, ensemble, policy)
                    flagged_after = {edited.node_ids[v] for v in after.anomalous}
                    counts = counts + self.tracer.score_node_level(
                        edited, labeled.anomalous_nodes, flagged_after, hop_credit=False, universe=universe)

                values = metrics(counts)
                rows.append({
                    "delta_a": delta,
                    "attack_kind": kind.value,
                    "FNR": values["fnr"],
                    "FPR": values["fpr"],
                    "precision": values["precision"],
                    "recall": values["recall"],
                    **counts.to_dict(),
                    "attacked": attacked,
                    "infeasible": infeasible,
                    "no_improvement": unimproved,
                })
                logger.info("evasion %s delta_a=%s: FNR=%s", kind.value, delta, values["fnr"])
        return pd.DataFrame(rows)


# グローバルインスタンス
evasion_engine = EvasionAttackEngine()
