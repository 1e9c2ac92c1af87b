"""
🛡️ アラート・追跡エンジン
ノード判定を待機時間 T と許容数 T̂ でシステムアラートに変換し、異常ノードの2-hop近傍を追跡する

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Any, Iterable, Optional, Set, Tuple, Union
from pathlib import Path
import json
import logging
import re

import graphviz

from app.models.alert_state import AlertState, TracedSubgraph
from app.models.confusion import ConfusionCounts
from app.models.provenance_graph import ProvenanceGraph
from app.models.detector_config import DetectorConfig, default_config
from app.services.graph_store import GraphStore, within_hops


logger = logging.getLogger(__name__)


class AlertTracer:
    """待機キュー Q の管理と2-hop追跡"""

    def new_state(self, config: DetectorConfig = default_config) -> AlertState:
        return AlertState(
            waiting_time=config.waiting_time,
            tolerance=config.tolerance,
            whitelist=set(config.whitelist),
        )

    # ===== 判定の取り込み =====

    def ingest_verdicts(
        self,
        state: AlertState,
        snapshot_time: float,
        anomalous: Iterable[str],
        benign: Iterable[str],
    ) -> List[str]:
        """1スナップショット分の判定を反映し、新たに確定したノードを返す"""
        anomalous = set(anomalous)
        benign = set(benign)
        if anomalous & benign:
            raise ValueError("anomalous and benign sets must be disjoint")
        state.last_time = max(state.last_time, snapshot_time)

        for node_id in sorted(anomalous):
            if node_id in state.whitelist or node_id in state.confirmed or node_id in state.queue:
                continue
            state.queue[node_id] = snapshot_time

        for node_id in benign:
            state.queue.pop(node_id, None)

        confirmed = [node_id for node_id, first in state.queue.items()
                     if snapshot_time - first > state.waiting_time]
        self._confirm(state, confirmed, snapshot_time)
        return confirmed

    def close(self, state: AlertState, end_time: Optional[float] = None) -> List[str]:
        """ストリーム終端: end_time 時点で T を超えて待機したノードだけを確定させる

        T 以内のノードはキューに残る (T = ∞ なら何も確定しない)。
        """
        end_time = state.last_time if end_time is None else end_time
        confirmed = [n for n, first in state.queue.items() if end_time - first > state.waiting_time]
        self._confirm(state, confirmed, end_time)
        return confirmed

    def _confirm(self, state: AlertState, node_ids: List[str], when: float) -> None:
        for node_id in node_ids:
            del state.queue[node_id]
            state.confirmed[node_id] = when
        if node_ids:
            logger.debug("confirmed %d nodes at t=%s", len(node_ids), when)
        if not state.alert_raised and len(state.confirmed) > state.tolerance:
            state.alert_raised = True
            state.alert_time = when
            logger.info("alert raised at t=%s: %d confirmed nodes exceed tolerance %d",
                        when, len(state.confirmed), state.tolerance)

    # ===== 追跡 =====

    @staticmethod
    def _seen_times(graph: ProvenanceGraph, members: Iterable[int]) -> Dict[str, Tuple[int, int]]:
        seen = {}
        for v in members:
            stamps = [graph.timestamps[e] for e in graph.in_edges[v] + graph.out_edges[v]]
            seen[graph.node_ids[v]] = (min(stamps), max(stamps)) if stamps else (-1, -1)
        return seen

    def trace(self, source: Union[GraphStore, ProvenanceGraph], node_id: str,
              flagged: Iterable[str] = ()) -> TracedSubgraph:
        """node とその2-hop祖先・子孫の誘導サブグラフ

        source がストアなら近傍だけをディスク索引から読み込み、
        first_seen / last_seen は全履歴の値を使う。
        """
        if isinstance(source, GraphStore):
            graph = source.neighborhood(node_id, 2)
            members = set(range(graph.num_nodes))
            seen = source.seen_times(graph.node_ids)
        else:
            graph = source
            center = graph.ordinal(node_id)
            members = {center}
            members |= within_hops(graph, [center], 2, reverse=True)
            members |= within_hops(graph, [center], 2, reverse=False)
            seen = self._seen_times(graph, members)
        flagged = set(flagged)

        traced = TracedSubgraph(center=node_id)
        for v in sorted(members):
            member_id = graph.node_ids[v]
            first_seen, last_seen = seen.get(member_id, (-1, -1))
            traced.nodes[member_id] = {
                "type": graph.node_types[v],
                "flagged": member_id in flagged or member_id == node_id,
                "first_seen": first_seen,
                "last_seen": last_seen,
            }
        for e in graph.induced_edges(members).tolist():
            traced.edges.append({
                "src": graph.node_ids[graph.edge_src[e]],
                "dst": graph.node_ids[graph.edge_dst[e]],
                "type": graph.edge_types[e],
                "timestamp": graph.timestamps[e],
            })
        return traced

    def to_dot(self, traced: TracedSubgraph) -> graphviz.Digraph:
        dot = graphviz.Digraph(name="trace", comment=f"2-hop trace of {traced.center}")
        dot.attr(rankdir="LR")
        for node_id, info in traced.nodes.items():
            style = {"style": "filled", "fillcolor": "salmon"} if info["flagged"] else {}
            shape = "box" if info["type"] == "process" else "ellipse"
            label = f"{node_id}\n[{info['type']}]\nt={info['first_seen']}..{info['last_seen']}"
            dot.node(node_id, label, shape=shape, **style)
        for edge in traced.edges:
            dot.edge(edge["src"], edge["dst"], label=f"{edge['type']}@{edge['timestamp']}")
        return dot

    def write_trace(self, traced: TracedSubgraph, directory: str) -> Dict[str, str]:
        """<node>.dot と <node>.json を書き出す"""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        stem = re.sub(r"[^A-Za-z0-9._-]", "_", traced.center) or "node"
        dot_path = out / f"{stem}.dot"
        json_path = out / f"{stem}.json"
        dot_path.write_text(self.to_dot(traced).source, encoding="utf-8")
        payload = {"center": traced.center, "nodes": traced.nodes, "edges": traced.edges}
        json_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        return {"dot": str(dot_path), "json": str(json_path)}

    # ===== ノードレベル評価 =====

    def score_node_level(
        self,
        graph: ProvenanceGraph,
        ground_truth: Iterable[str],
        flagged: Iterable[str],
        hop_credit: bool = True,
        universe: Optional[Iterable[str]] = None,
    ) -> ConfusionCounts:
        """2-hop 近傍を考慮した TP/FP/TN/FN (hop_credit=False でノード単位の厳密集計)

        universe を渡すとそのノードだけを数える (攻撃で追加したノードを除く用途)。
        """
        anomalous = {graph.ordinal(n) for n in ground_truth if graph.has_node(n)}
        flagged_set = {graph.ordinal(n) for n in flagged if graph.has_node(n)}
        if universe is None:
            scored = range(graph.num_nodes)
        else:
            scored = sorted(graph.ordinal(n) for n in universe if graph.has_node(n))
        counts = ConfusionCounts()
        for v in scored:
            if hop_credit and (v in anomalous or v in flagged_set):
                near = within_hops(graph, [v], 2, reverse=True) | within_hops(graph, [v], 2, reverse=False)
            else:
                near = set()
            if v in anomalous:
                if v in flagged_set or near & flagged_set:
                    counts.tp += 1
                else:
                    counts.fn += 1
            elif v in flagged_set:
                if near & anomalous:
                    counts.tn += 1
                else:
                    counts.fp += 1
            else:
                counts.tn += 1
        return counts


# グローバルインスタンス
alert_tracer = AlertTracer()
