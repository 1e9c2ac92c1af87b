"""
🛡️ 評価ハーネス
データセット読み込み・検証分割・評価指標・学習曲線・欠損データ/パラメータ/実行時間の各実験

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Any, Callable, Iterable, Iterator, Optional, Sequence, Set, Tuple, Union
from collections import OrderedDict, defaultdict
from pathlib import Path
import json
import logging
import math
import time

import numpy as np
import pandas as pd
import psutil
from sklearn.model_selection import KFold, train_test_split

from app.models.confusion import ConfusionCounts
from app.models.errors import FormatError, InsufficientGraphs, UndefinedMetric
from app.models.provenance_graph import EdgeRecord, LabeledGraph, ProvenanceGraph, Subgraph
from app.models.role_model import Ensemble, TrainingReport
from app.models.detector_config import DetectorConfig, default_config
from app.services.alert_tracer import AlertTracer, alert_tracer
from app.services.feature_extractor import FeatureExtractor, feature_extractor
from app.services.graph_store import parse_edge_line
from app.services.graphsage import GraphSAGEEngine, accept_mask, graphsage_engine
from app.services.multi_model import MultiModelEngine, multi_model_engine
from app.services.streaming_detector import replay_graph


logger = logging.getLogger(__name__)

METRIC_NAMES = ("precision", "recall", "accuracy", "f_score", "fpr", "fnr")
STREAMSPOT_SCENE_SIZE = 100
STREAMSPOT_ATTACK_SCENES = (3,)


# ===== 評価指標 =====

def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return numerator / denominator if denominator else None


def metrics(counts: ConfusionCounts, require: Iterable[str] = ()) -> Dict[str, Optional[float]]:
    """6指標 (分母 0 は None、require に挙げた指標が None なら UndefinedMetric)"""
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f_score = None
    if precision is not None and recall is not None and precision + recall > 0:
        f_score = 2 * precision * recall / (precision + recall)
    values = {
        "precision": precision,
        "recall": recall,
        "accuracy": _ratio(tp + tn, tp + tn + fp + fn),
        "f_score": f_score,
        "fpr": _ratio(fp, fp + tn),
        "fnr": _ratio(fn, fn + tp),
    }
    for name in require:
        if values[name] is None:
            raise UndefinedMetric(name)
    undefined = [name for name, value in values.items() if value is None]
    if undefined:
        logger.warning("undefined metrics: %s", ", ".join(undefined))
    return values


# ===== 読み込み =====

def load_canonical(path: str, graph_id: Optional[str] = None) -> ProvenanceGraph:
    """正規形式のエッジストリーム1本"""
    graph = ProvenanceGraph(graph_id if graph_id is not None else Path(path).stem)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                graph.add_edge(parse_edge_line(line, line_no, path), line_no)
    return graph


def write_canonical(graph: ProvenanceGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in graph.iter_records():
            fh.write(record.to_line() + "\n")


def load_ground_truth(path: str) -> Set[str]:
    """異常ノード id を1行1件"""
    with open(path, encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}


def load_streamspot(
    path: str,
    attack_scenes: Sequence[int] = STREAMSPOT_ATTACK_SCENES,
    scene_size: int = STREAMSPOT_SCENE_SIZE,
) -> List[LabeledGraph]:
    """src, src_type, dst, dst_type, edge_type, graph_id の TSV (タイムスタンプは edge_id で補完)"""
    graphs: "OrderedDict[int, ProvenanceGraph]" = OrderedDict()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\r\n").split("\t")
            if len(fields) != 6:
                raise FormatError(f"expected 6 StreamSpot columns, got {len(fields)}", line_no, path)
            try:
                gid = int(fields[5])
            except ValueError:
                raise FormatError(f"graph_id {fields[5]!r} is not an integer", line_no, path) from None
            graph = graphs.setdefault(gid, ProvenanceGraph(str(gid)))
            graph.add_edge(EdgeRecord(*fields[:5]), line_no)

    labeled = []
    for gid in sorted(graphs):
        scene = gid // scene_size
        labeled.append(LabeledGraph(graphs[gid], is_attack=scene in attack_scenes, scene=str(scene)))
    logger.info("loaded %d StreamSpot graphs (%d attack)", len(labeled), sum(g.is_attack for g in labeled))
    return labeled


# ===== 分割 =====

def _by_scene(graphs: Sequence[LabeledGraph]) -> Dict[str, List[LabeledGraph]]:
    scenes: Dict[str, List[LabeledGraph]] = defaultdict(list)
    for g in graphs:
        if not g.is_attack:
            scenes[g.scene].append(g)
    return scenes


def subsample_per_scene(graphs: Sequence[LabeledGraph], per_scene: int, seed: int = 0) -> List[LabeledGraph]:
    """良性シーンごとに per_scene 本を残す (攻撃グラフは全て残す)"""
    rng = np.random.default_rng(seed)
    kept: List[LabeledGraph] = []
    for scene, members in sorted(_by_scene(graphs).items()):
        order = rng.permutation(len(members))[:per_scene]
        kept.extend(members[i] for i in sorted(order))
    kept.extend(g for g in graphs if g.is_attack)
    return kept


def iter_folds(graphs: Sequence[LabeledGraph], n_folds: int = 5, seed: int = 0) -> Iterator[Tuple[List[LabeledGraph], List[LabeledGraph]]]:
    """良性グラフの k 分割交差検証 (各テスト fold に全攻撃グラフを加える)"""
    benign = [g for g in graphs if not g.is_attack]
    attack = [g for g in graphs if g.is_attack]
    if n_folds < 2 or len(benign) < n_folds:
        raise InsufficientGraphs(f"{len(benign)} benign graphs cannot form {n_folds} folds")
    folds = KFold(n_splits=n_folds, shuffle=True, random_state=seed)
    for train_idx, test_idx in folds.split(np.arange(len(benign))):
        train = [benign[i] for i in sorted(train_idx.tolist())]
        test = [benign[i] for i in sorted(test_idx.tolist())] + attack
        yield train, test


def split_train_test(
    graphs: Sequence[LabeledGraph],
    strategy: str = "streamspot",
    seed: int = 0,
    fold: int = 0,
    n_folds: int = 5,
    train_ratio: float = 0.75,
) -> Tuple[List[LabeledGraph], List[LabeledGraph]]:
    """streamspot: シーン毎 75/25 + 攻撃は全てテスト / kfold: fold 番目の分割"""
    if strategy == "kfold":
        if not 0 <= fold < n_folds:
            raise ValueError(f"fold must be in [0, {n_folds})")
        for k, split in enumerate(iter_folds(graphs, n_folds, seed)):
            if k == fold:
                return split
    if strategy != "streamspot":
        raise ValueError(f"unknown split strategy {strategy!r}")

    scenes = _by_scene(graphs)
    if not scenes:
        raise InsufficientGraphs("no benign graphs to train on")
    train: List[LabeledGraph] = []
    test: List[LabeledGraph] = []
    for scene, members in sorted(scenes.items()):
        if len(members) < 2:
            raise InsufficientGraphs(f"scene {scene} has {len(members)} benign graph(s); need at least 2")
        n_train = min(len(members) - 1, max(1, int(round(len(members) * train_ratio))))
        train_idx, test_idx = train_test_split(np.arange(len(members)), train_size=n_train, random_state=seed)
        train.extend(members[i] for i in sorted(train_idx.tolist()))
        test.extend(members[i] for i in sorted(test_idx.tolist()))
    test.extend(g for g in graphs if g.is_attack)
    return train, test


# ===== 欠損データ =====

def drop_edges(graph: ProvenanceGraph, delta: float, seed: int = 0) -> ProvenanceGraph:
    """⌊delta·|E|⌋ 本のエッジを一様に削除する (ノード集合は保持)"""
    if not 0 <= delta < 1:
        raise ValueError("delta must satisfy 0 <= delta < 1")
    n_drop = int(math.floor(delta * graph.num_edges))
    if n_drop == 0:
        return graph.copy()
    dropped = np.random.default_rng(seed).choice(graph.num_edges, size=n_drop, replace=False)
    return graph.without_edges(dropped.tolist())


def drop_labeled(graphs: Sequence[LabeledGraph], delta: float, seed: int = 0) -> List[LabeledGraph]:
    return [
        LabeledGraph(drop_edges(g.graph, delta, seed + i), g.is_attack, g.scene, set(g.anomalous_nodes))
        for i, g in enumerate(graphs)
    ]


def disjoint_union(graphs: Sequence[ProvenanceGraph], graph_id: str = "union") -> ProvenanceGraph:
    """node_id に graph_id を前置して1本のグラフにまとめる"""
    union = ProvenanceGraph(graph_id)
    for g in graphs:
        for node_id, node_type in zip(g.node_ids, g.node_types):
            union.add_node(f"{g.graph_id}/{node_id}", node_type)
        for r in g.iter_records():
            union.add_edge(EdgeRecord(f"{g.graph_id}/{r.src_id}", r.src_type, f"{g.graph_id}/{r.dst_id}",
                                      r.dst_type, r.edge_type, r.timestamp))
    return union


class EvaluationHarness:
    """学習・リプレイ・集計をまとめた実験ランナー"""

    def __init__(
        self,
        engine: MultiModelEngine = multi_model_engine,
        gnn: GraphSAGEEngine = graphsage_engine,
        extractor: FeatureExtractor = feature_extractor,
        tracer: AlertTracer = alert_tracer,
    ):
        self.engine = engine
        self.gnn = gnn
        self.extractor = extractor
        self.tracer = tracer

    # ===== 学習 =====

    def train(self, graphs: Sequence[LabeledGraph], config: DetectorConfig = default_config) -> Tuple[Ensemble, TrainingReport]:
        return self.engine.train_on_graph_sequence([g.graph for g in graphs], config)

    # ===== 学習曲線 =====

    def learning_curve(
        self,
        graphs: Sequence[ProvenanceGraph],
        config: DetectorConfig = default_config,
        axis: str = "iterations",
        values: Sequence[float] = (10, 20, 30, 40, 50, 60),
        seeds: Sequence[int] = (0,),
    ) -> pd.DataFrame:
        """ノードを 8:2 に分け、軸の値ごとに新しく学習した確信分類率を記録する"""
        if axis not in ("iterations", "fraction"):
            raise ValueError("axis must be 'iterations' or 'fraction'")
        union = disjoint_union(graphs)
        maps = self.extractor.build_type_maps([union])
        table = self.extractor.extract_features(union, maps)
        view = self.gnn.prepare(union, Subgraph.whole_graph(union), table)

        rows: List[Dict[str, Any]] = []
        for seed in seeds:
            order = np.random.default_rng([config.seed, seed]).permutation(union.num_nodes)
            n_validation = int(round(0.2 * union.num_nodes))
            validation = np.sort(order[:n_validation])
            training = order[n_validation:]
            for value in values:
                cfg = config
                targets = np.sort(training)
                if axis == "iterations":
                    cfg = config.evolve(epoch=int(value))
                else:
                    targets = np.sort(training[:max(1, int(math.ceil(value * len(training))))])
                submodel, history = self.gnn.train_submodel(view, targets, maps.n_node_types, cfg,
                                                            seed=[config.seed, seed], maps_fingerprint=maps.fingerprint())
                rows.append({
                    "axis": axis,
                    "value": value,
                    "seed": seed,
                    "train_accuracy": self._acceptance_rate(view, submodel, targets, config.ratio_threshold),
                    "validation_accuracy": self._acceptance_rate(view, submodel, validation, config.ratio_threshold),
                    "final_loss": history[-1],
                    "train_nodes": len(targets),
                    "validation_nodes": len(validation),
                })
        return pd.DataFrame(rows)

    def _acceptance_rate(self, view, submodel, rows: np.ndarray, ratio_threshold: float) -> Optional[float]:
        if len(rows) == 0:
            return None
        probs = self.gnn.predict_proba(view, submodel, rows)
        return float(accept_mask(probs, view.labels[rows], ratio_threshold).mean())

    # ===== グラフレベル評価 =====

    def run_graph_level_eval(
        self,
        train: Union[Ensemble, Sequence[LabeledGraph]],
        test: Sequence[LabeledGraph],
        config: DetectorConfig = default_config,
    ) -> Tuple[pd.DataFrame, ConfusionCounts]:
        """テストグラフを1本ずつストリーミング再生し、アラートの有無をグラフ判定とする"""
        ensemble = train if isinstance(train, Ensemble) else self.train(train, config)[0]
        rows: List[Dict[str, Any]] = []
        counts = ConfusionCounts()
        for labeled in test:
            summary = replay_graph(ensemble, labeled.graph.iter_records(), config, labeled.graph_id)
            predicted = summary.alert_raised
            if labeled.is_attack:
                counts.tp += predicted
                counts.fn += not predicted
            else:
                counts.fp += predicted
                counts.tn += not predicted
            rows.append({
                "graph_id": labeled.graph_id,
                "scene": labeled.scene,
                "is_attack": labeled.is_attack,
                "alert_raised": predicted,
                "alert_time": summary.alert_time,
                "confirmed": summary.confirmed,
                "flushes": summary.flushes,
                "edges_per_second": summary.edges_per_second,
            })
        return pd.DataFrame(rows), counts

    # ===== ノードレベル評価 =====

    def run_node_level_eval(
        self,
        ensemble: Ensemble,
        graph: ProvenanceGraph,
        ground_truth: Set[str],
        config: DetectorConfig = default_config,
        hop_credit: bool = True,
        streaming: bool = True,
    ) -> Tuple[ConfusionCounts, Set[str]]:
        """確定ノード (streaming=False ならグラフ全体での異常ノード) を正解と照合する"""
        if streaming:
            summary = replay_graph(ensemble, graph.iter_records(), config, graph.graph_id)
            flagged = set(summary.confirmed_nodes)
        else:
            result = self.engine.detect_graph(graph, ensemble, config.unknown_type_policy)
            flagged = {graph.node_ids[v] for v in result.anomalous}
        return self.tracer.score_node_level(graph, ground_truth, flagged, hop_credit), flagged

    # ===== 反復 =====

    def repeat(self, run: Callable[[int], ConfusionCounts], repetitions: int, seed: int = 0) -> Tuple[ConfusionCounts, List[ConfusionCounts]]:
        """run(seed) を repetitions 回実行し平均を取る"""
        runs = [run(seed + i) for i in range(repetitions)]
        return ConfusionCounts.mean(runs), runs

    # ===== 実験 =====

    def parameter_sweep(
        self,
        train: Sequence[LabeledGraph],
        test: Sequence[LabeledGraph],
        config: DetectorConfig,
        parameter: str,
        values: Sequence[Any],
    ) -> pd.DataFrame:
        """1つのパラメータだけを変え、他は基準値のままグラフレベル指標を測る"""
        rows = []
        for value in values:
            cfg = config.evolve(**{parameter: value})
            verdicts, counts = self.run_graph_level_eval(train, test, cfg)
            latency = verdicts.loc[verdicts["is_attack"] & verdicts["alert_raised"], "alert_time"]
            rows.append({
                "parameter": parameter,
                "value": value,
                **metrics(counts),
                "mean_alert_time": float(latency.mean()) if len(latency) else None,
            })
        return pd.DataFrame(rows)

    def missing_data_study(
        self,
        train: Sequence[LabeledGraph],
        test: Sequence[LabeledGraph],
        config: DetectorConfig,
        train_deltas: Sequence[float] = (0.0, 0.1, 0.2),
        test_deltas: Sequence[float] = (0.0, 0.1, 0.2),
    ) -> pd.DataFrame:
        """(δ_train, δ_test) の格子でエッジを欠落させたときの指標"""
        rows = []
        for d_train in train_deltas:
            ensemble, _ = self.train(drop_labeled(train, d_train, config.seed), config)
            for d_test in test_deltas:
                _, counts = self.run_graph_level_eval(ensemble, drop_labeled(test, d_test, config.seed + 1), config)
                rows.append({"delta_train": d_train, "delta_test": d_test, **counts.to_dict(), **metrics(counts)})
        return pd.DataFrame(rows)

    def runtime_profile(
        self,
        train: Sequence[LabeledGraph],
        test: Sequence[LabeledGraph],
        config: DetectorConfig,
        ss_values: Sequence[int] = (),
        bs_values: Sequence[int] = (),
    ) -> pd.DataFrame:
        """SS / BS を変えたときの処理速度と常駐メモリ"""
        process = psutil.Process()
        rows = []
        ensemble, _ = self.train(train, config)
        for ss in ss_values:
            cfg = config.evolve(subgraph_size=ss)
            edges, elapsed, peak = 0, 0.0, 0
            for labeled in test:
                summary = replay_graph(ensemble, labeled.graph.iter_records(), cfg, labeled.graph_id)
                edges += summary.edges
                elapsed += summary.elapsed
                peak = max(peak, summary.peak_nodes)
            rows.append({
                "parameter": "SS", "value": ss,
                "edges_per_second": edges / elapsed if elapsed > 0 else None,
                "peak_subgraph_nodes": peak,
                "rss_mb": process.memory_info().rss / 2 ** 20,
            })
        for bs in bs_values:
            cfg = config.evolve(batch_size=bs)
            started = time.perf_counter()
            self.train(train, cfg)
            rows.append({
                "parameter": "BS", "value": bs,
                "train_seconds": time.perf_counter() - started,
                "rss_mb": process.memory_info().rss / 2 ** 20,
            })
        return pd.DataFrame(rows)


# ===== 出力 =====

def write_table(table: pd.DataFrame, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False)


def write_summary(summary: Dict[str, Any], path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=str), encoding="utf-8")


# グローバルインスタンス
evaluation_harness = EvaluationHarness()
