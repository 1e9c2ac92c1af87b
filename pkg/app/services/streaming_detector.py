"""
🛡️ ストリーミング検知パイプライン
ストア → 特徴量 → マルチモデル検知 → アラート/追跡 の実行フェーズ

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Any, Callable, Iterable, Optional
from dataclasses import dataclass, field
import asyncio
import logging
import time

from app.models.alert_state import AlertRecord, AlertState
from app.models.feature_types import FeatureTable
from app.models.provenance_graph import EdgeRecord
from app.models.role_model import DetectionResult, Ensemble
from app.models.detector_config import DetectorConfig, FeatureScope, default_config
from app.services.alert_tracer import AlertTracer, alert_tracer
from app.services.feature_extractor import FeatureExtractor, feature_extractor
from app.services.graph_store import GraphSnapshot, GraphStore, parse_edge_line
from app.services.multi_model import MultiModelEngine, multi_model_engine


logger = logging.getLogger(__name__)


@dataclass
class DetectionSummary:
    """1回のリプレイの要約"""
    flushes: int = 0
    edges: int = 0
    confirmed: int = 0
    alert_raised: bool = False
    alert_time: Optional[float] = None
    peak_nodes: int = 0
    elapsed: float = 0.0
    records: List[AlertRecord] = field(default_factory=list)
    confirmed_nodes: List[str] = field(default_factory=list)

    @property
    def edges_per_second(self) -> float:
        return self.edges / self.elapsed if self.elapsed > 0 else 0.0

    def summary_line(self) -> str:
        return f"flushes={self.flushes} confirmed={self.confirmed} alert_raised={str(self.alert_raised).lower()}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "flushes": self.flushes,
            "edges": self.edges,
            "confirmed": self.confirmed,
            "alert_raised": self.alert_raised,
            "alert_time": self.alert_time,
            "peak_nodes": self.peak_nodes,
            "edges_per_second": self.edges_per_second,
            "confirmed_nodes": self.confirmed_nodes,
        }


class StreamingDetector:
    """1本のエッジストリームに対する検知器"""

    def __init__(
        self,
        ensemble: Ensemble,
        config: DetectorConfig = default_config,
        store: Optional[GraphStore] = None,
        on_confirm: Optional[Callable[[AlertRecord], None]] = None,
        engine: MultiModelEngine = multi_model_engine,
        extractor: FeatureExtractor = feature_extractor,
        tracer: AlertTracer = alert_tracer,
    ):
        self.ensemble = ensemble
        self.config = config
        self.store = store if store is not None else GraphStore.in_memory(config)
        self.on_confirm = on_confirm
        self.engine = engine
        self.extractor = extractor
        self.tracer = tracer
        self.state: AlertState = tracer.new_state(config)
        self.flagged: Dict[str, AlertRecord] = {}
        self.summary = DetectionSummary()
        self._started = time.perf_counter()

    # ===== 取り込み =====

    def ingest(self, record: EdgeRecord, line_no: Optional[int] = None) -> Optional[GraphSnapshot]:
        """1エッジを追記し、ウィンドウが満杯ならスナップショットを返す"""
        self.store.append_edge(record, line_no)
        self.summary.edges += 1
        if self.store.window_full():
            return self.store.flush_window()
        return None

    def ingest_line(self, line: str, line_no: Optional[int] = None) -> Optional[GraphSnapshot]:
        if not line.strip():
            return None
        return self.ingest(parse_edge_line(line, line_no), line_no)

    # ===== 検知 =====

    def _features(self, snapshot: GraphSnapshot) -> FeatureTable:
        policy = self.config.unknown_type_policy
        if self.config.feature_scope is FeatureScope.HISTORY and snapshot.history is not None:
            return self.extractor.features_from_counter(snapshot.graph, self.ensemble.maps, snapshot.history,
                                                        snapshot.subgraph, policy)
        return self.extractor.extract_features(snapshot.graph, self.ensemble.maps, snapshot.subgraph, policy)

    def process_snapshot(self, snapshot: GraphSnapshot) -> DetectionResult:
        """スナップショットの active ノードを検知し、アラート状態へ反映する"""
        graph = snapshot.graph
        table = self._features(snapshot)
        result = self.engine.detect(graph, snapshot.subgraph, table, snapshot.subgraph.active, self.ensemble,
                                    self.config.unknown_type_policy)
        self.summary.flushes += 1

        names = self.ensemble.maps.node_type_names()
        for ordinal in result.anomalous:
            node_id = graph.node_ids[ordinal]
            diag = result.diagnostics[ordinal]
            best = names[diag.best_class] if diag.best_class >= 0 else "?"
            self.flagged[node_id] = AlertRecord(snapshot.snapshot_time, node_id, graph.node_types[ordinal],
                                                best, diag.ratio)

        confirmed = self.tracer.ingest_verdicts(
            self.state,
            snapshot.snapshot_time,
            {graph.node_ids[v] for v in result.anomalous},
            {graph.node_ids[v] for v in result.benign},
        )
        self._emit(confirmed)
        logger.info("flush %d at t=%s: active=%d anomalous=%d queued=%d confirmed=%d",
                    self.summary.flushes, snapshot.snapshot_time, len(snapshot.subgraph.active),
                    len(result.anomalous), len(self.state.queue), len(self.state.confirmed))
        return result

    def _emit(self, node_ids: List[str]) -> None:
        for node_id in node_ids:
            flagged = self.flagged[node_id]
            record = AlertRecord(self.state.confirmed[node_id], node_id, flagged.node_type,
                                 flagged.best_class, flagged.ratio)
            self.summary.records.append(record)
            self.summary.confirmed_nodes.append(node_id)
            if self.on_confirm is not None:
                self.on_confirm(record)

    def finish(self) -> DetectionSummary:
        """残りのウィンドウを検知し、アラート状態を閉じる"""
        snapshot = self.store.flush_window()
        if snapshot is not None:
            self.process_snapshot(snapshot)
        return self._close()

    def _close(self) -> DetectionSummary:
        end_time = self.store.latest_timestamp if self.store.num_edges else None
        self._emit(self.tracer.close(self.state, end_time))
        self.summary.confirmed = len(self.state.confirmed)
        self.summary.alert_raised = self.state.alert_raised
        self.summary.alert_time = self.state.alert_time
        self.summary.peak_nodes = self.store.peak_nodes
        self.summary.elapsed = time.perf_counter() - self._started
        return self.summary

    # ===== リプレイ =====

    def run(self, lines: Iterable[str]) -> DetectionSummary:
        """同期リプレイ"""
        for line_no, line in enumerate(lines, start=1):
            snapshot = self.ingest_line(line, line_no)
            if snapshot is not None:
                self.process_snapshot(snapshot)
        return self.finish()

    def run_records(self, records: Iterable[EdgeRecord]) -> DetectionSummary:
        for line_no, record in enumerate(records, start=1):
            snapshot = self.ingest(record, line_no)
            if snapshot is not None:
                self.process_snapshot(snapshot)
        return self.finish()

    async def run_async(self, lines: Iterable[str]) -> DetectionSummary:
        """取り込みと検知の2段パイプライン (凍結スナップショットを有界キューで受け渡す)"""
        queue: asyncio.Queue = asyncio.Queue(maxsize=self.config.snapshot_queue_size)

        async def produce():
            try:
                for line_no, line in enumerate(lines, start=1):
                    snapshot = self.ingest_line(line, line_no)
                    if snapshot is not None:
                        await queue.put(snapshot)
                        await asyncio.sleep(0)
                snapshot = self.store.flush_window()
                if snapshot is not None:
                    await queue.put(snapshot)
            except Exception as e:
                await queue.put(e)
                return
            await queue.put(None)

        async def consume():
            while True:
                item = await queue.get()
                if item is None:
                    return
                if isinstance(item, Exception):
                    raise item
                self.process_snapshot(item)

        producer = asyncio.create_task(produce())
        try:
            await consume()
        except BaseException:
            producer.cancel()
            raise
        await producer
        return self._close()


def replay_graph(ensemble: Ensemble, records: Iterable[EdgeRecord], config: DetectorConfig = default_config,
                 graph_id: str = "") -> DetectionSummary:
    """グラフ1本をメモリ上ストアでリプレイする"""
    detector = StreamingDetector(ensemble, config, GraphStore.in_memory(config, graph_id))
    return detector.run_records(records)
