"""
🛡️ グラフストア
来歴グラフ全体をディスクに追記保存し、学習・検知用の有界サブグラフを切り出す

ディレクトリ構成:
    edges.log  正規形式のエッジを1行1件で追記 (正本)
    nodes.idx  ordinal<TAB>node_id<TAB>node_type のスナップショット
    index.db   SQLite の隣接索引とエッジ型カウンタ (edges.log から再構築可能)
    meta.json  バージョンとカウンタ

メモリに載るのは実行ウィンドウの active 集合と、検知時に読み込む局所グラフだけ。

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Any, Iterable, Iterator, Optional, Set, Tuple
from dataclasses import dataclass, replace
from pathlib import Path
import json
import logging
import os
import sqlite3

import numpy as np

from app.models.errors import FormatError, TypeConflict, UnknownNode
from app.models.provenance_graph import EdgeRecord, ProvenanceGraph, Subgraph
from app.models.detector_config import DetectorConfig, FeatureScope, SSSemantics, default_config
from app.services.feature_extractor import IncrementalFeatureCounter


logger = logging.getLogger(__name__)

STORE_VERSION = 2
EDGE_LOG = "edges.log"
NODE_INDEX = "nodes.idx"
INDEX_DB = "index.db"
META_FILE = "meta.json"

SQL_CHUNK = 500
INCOMING, OUTGOING = 0, 1

_INDEX_SCHEMA_SQL = """
CREATE TABLE IF NOT EXISTS nodes (
    ordinal    INTEGER PRIMARY KEY,
    node_id    TEXT NOT NULL UNIQUE,
    node_type  TEXT NOT NULL,
    first_seen INTEGER NOT NULL DEFAULT -1,
    last_seen  INTEGER NOT NULL DEFAULT -1
);
CREATE TABLE IF NOT EXISTS edges (
    edge_id   INTEGER PRIMARY KEY,
    src       INTEGER NOT NULL,
    dst       INTEGER NOT NULL,
    edge_type TEXT NOT NULL,
    ts        INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS edges_by_src ON edges(src);
CREATE INDEX IF NOT EXISTS edges_by_dst ON edges(dst);
CREATE TABLE IF NOT EXISTS type_counts (
    ordinal   INTEGER NOT NULL,
    direction INTEGER NOT NULL,
    edge_type TEXT NOT NULL,
    count     INTEGER NOT NULL,
    PRIMARY KEY (ordinal, direction, edge_type)
) WITHOUT ROWID;
CREATE TEMP TABLE IF NOT EXISTS members (ordinal INTEGER PRIMARY KEY);
"""


# ===== 入力解析 =====

def parse_edge_line(line: str, line_no: Optional[int] = None, source: Optional[str] = None) -> EdgeRecord:
    """src_id, src_type, dst_id, dst_type, edge_type[, timestamp] のタブ区切り1行"""
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) not in (5, 6):
        raise FormatError(f"expected 5 or 6 tab-separated fields, got {len(fields)}", line_no, source)
    if not all(fields[:5]):
        raise FormatError("empty id or type field", line_no, source)

    timestamp = None
    if len(fields) == 6 and fields[5] != "":
        try:
            timestamp = int(fields[5])
        except ValueError:
            raise FormatError(f"timestamp {fields[5]!r} is not an integer", line_no, source) from None
    return EdgeRecord(fields[0], fields[1], fields[2], fields[3], fields[4], timestamp)


# ===== 近傍探索 =====

def within_hops(graph: ProvenanceGraph, start: Iterable[int], hops: int, reverse: bool) -> Set[int]:
    """start から有向 hops ステップ以内に到達するノード (start 自身は除く)

    reverse=True で祖先 (入辺を逆にたどる)、False で子孫。
    """
    seeds = set(start)
    seen = set(seeds)
    frontier = seeds
    for _ in range(hops):
        reached: Set[int] = set()
        for v in frontier:
            reached |= graph.in_neighbors(v) if reverse else graph.out_neighbors(v)
        frontier = reached - seen
        if not frontier:
            break
        seen |= frontier
    return seen - seeds


def two_hop_ancestors(graph: ProvenanceGraph, node_id: str) -> Set[str]:
    ordinal = graph.ordinal(node_id)
    return {graph.node_ids[v] for v in within_hops(graph, [ordinal], 2, reverse=True)}


def two_hop_descendants(graph: ProvenanceGraph, node_id: str) -> Set[str]:
    ordinal = graph.ordinal(node_id)
    return {graph.node_ids[v] for v in within_hops(graph, [ordinal], 2, reverse=False)}


def context_subgraph(graph: ProvenanceGraph, active: Iterable[int], hops: int, snapshot_time: int = 0) -> Subgraph:
    """active + hops 以内の祖先 (related) + 誘導エッジ"""
    active = frozenset(active)
    related = frozenset(within_hops(graph, active, hops, reverse=True))
    edge_ids = graph.induced_edges(active | related)
    return Subgraph(active=active, related=related, edge_ids=edge_ids, snapshot_time=snapshot_time)


def build_training_subgraphs(
    graph: ProvenanceGraph,
    split_size: int,
    seed: int = 0,
    hops: int = 2,
) -> List[Subgraph]:
    """全ノードを split_size 以下の互いに素な active 集合へ無作為に分割する"""
    if split_size < 1:
        raise ValueError("split_size must be >= 1")
    n = graph.num_nodes
    if n == 0:
        return []
    snapshot_time = graph.timestamps[-1] if graph.timestamps else 0
    if split_size >= n:
        return [context_subgraph(graph, range(n), hops, snapshot_time)]

    order = np.random.default_rng(seed).permutation(n)
    return [
        context_subgraph(graph, order[start:start + split_size].tolist(), hops, snapshot_time)
        for start in range(0, n, split_size)
    ]


# ===== 局所グラフ =====

@dataclass(frozen=True, eq=False)
class GraphSnapshot:
    """ストアから読み込んだ局所グラフとその上のサブグラフ

    局所 ordinal はストア全体の ordinal と同じ順序に並ぶ。
    """
    graph: ProvenanceGraph
    subgraph: Subgraph
    ordinals: np.ndarray                                   # 局所 ordinal → ストア全体の ordinal
    history: Optional[IncrementalFeatureCounter] = None    # feature_scope=history のときだけ

    @property
    def snapshot_time(self) -> int:
        return self.subgraph.snapshot_time

    @property
    def size(self) -> int:
        return self.subgraph.size

    @property
    def active_ids(self) -> Set[str]:
        return {self.graph.node_ids[v] for v in self.subgraph.active}

    @property
    def related_ids(self) -> Set[str]:
        return {self.graph.node_ids[v] for v in self.subgraph.related}


# ===== 実行時サブグラフ =====

class ExecutionWindow:
    """検知フェーズの実行ウィンドウ

    到着エッジの dst とその2-hop子孫を active にし、
    SS 件 (ss_semantics に従う) に達したらストアからスナップショットを読み込む。
    """

    def __init__(self, store: "GraphStore", config: DetectorConfig = default_config):
        self.store = store
        self.config = config
        self.active: Set[int] = set()
        self.new_edges = 0
        self.peak_nodes = 0
        self.flushes = 0

    def observe(self, dst: int) -> None:
        self.active.add(dst)
        self.active |= self.store.descendants_of([dst], 2)
        self.new_edges += 1
        self.peak_nodes = max(self.peak_nodes, len(self.active))

    def full(self) -> bool:
        if self.config.ss_semantics is SSSemantics.ACTIVE_NODES:
            return len(self.active) >= self.config.subgraph_size
        return self.new_edges >= self.config.subgraph_size

    def pending(self) -> bool:
        return bool(self.active)

    def flush(self) -> Optional[GraphSnapshot]:
        """凍結スナップショットを返し、ウィンドウを空にする"""
        if not self.active:
            self.new_edges = 0
            return None
        snapshot = self.store.snapshot(self.active)
        self.flushes += 1
        logger.debug("window flushed: active=%d related=%d edges=%d",
                     len(snapshot.subgraph.active), len(snapshot.subgraph.related), snapshot.graph.num_edges)
        self.active = set()
        self.new_edges = 0
        return snapshot


# ===== ストア本体 =====

class GraphStore:
    """追記専用のディスク保存グラフ + SQLite 隣接索引"""

    def __init__(self, directory: Optional[str] = None, config: DetectorConfig = default_config, graph_id: str = ""):
        self.directory = Path(directory) if directory else None
        self.config = config
        self.graph_id = graph_id
        self.window = ExecutionWindow(self, config)
        self._conn: Optional[sqlite3.Connection] = self._connect()
        self._log = None
        self._num_nodes = 0
        self._num_edges = 0
        self._latest = 0
        self._indexed_nodes = 0
        self._peak_paged = 0

    def _connect(self) -> sqlite3.Connection:
        target = str(self.directory / INDEX_DB) if self.directory is not None else ":memory:"
        conn = sqlite3.connect(target)
        conn.executescript(_INDEX_SCHEMA_SQL)
        return conn

    # --- 開閉 ---

    @classmethod
    def in_memory(cls, config: DetectorConfig = default_config, graph_id: str = "") -> "GraphStore":
        """ログを持たないストア (索引は SQLite のメモリ DB)"""
        return cls(None, config, graph_id)

    @classmethod
    def open(cls, directory: str, config: DetectorConfig = default_config) -> "GraphStore":
        """既存ストアを復元する (無ければ作成)"""
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        meta = cls._read_meta(path)
        store = cls(str(path), config, meta.get("graph_id", ""))
        store._recover(meta)
        store._log = open(path / EDGE_LOG, "a", encoding="utf-8")
        return store

    @staticmethod
    def _read_meta(path: Path) -> Dict[str, Any]:
        meta_path = path / META_FILE
        if not meta_path.exists():
            return {}
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"corrupt meta.json: {e}", source=str(meta_path)) from e
        if meta.get("version") != STORE_VERSION:
            raise FormatError(f"unsupported store version {meta.get('version')}", source=str(meta_path))
        return meta

    def _recover(self, meta: Dict[str, Any]) -> None:
        assert self.directory is not None
        log_path = self.directory / EDGE_LOG
        logged = self._trim_log(log_path) if log_path.exists() else 0
        indexed = self._conn.execute("SELECT COUNT(*) FROM edges").fetchone()[0]
        if indexed != logged:
            logger.warning("%s holds %d edges, %s holds %d; rebuilding the index",
                           INDEX_DB, indexed, EDGE_LOG, logged)
            self._rebuild_index(log_path)
        self._load_counters()

        index_path = self.directory / NODE_INDEX
        self._indexed_nodes = self._count_lines(index_path) if index_path.exists() else 0

        expected = meta.get("num_edges")
        if expected is not None and expected != self._num_edges:
            logger.warning("meta.json counts %d edges, log holds %d; trusting the log",
                           expected, self._num_edges)
        if meta or self._num_edges:
            logger.info("store recovered from %s: %d nodes, %d edges",
                        self.directory, self._num_nodes, self._num_edges)

    @staticmethod
    def _count_lines(path: Path) -> int:
        with open(path, "rb") as fh:
            return sum(block.count(b"\n") for block in iter(lambda: fh.read(1 << 20), b""))

    def _trim_log(self, log_path: Path) -> int:
        """書きかけの末尾行を切り詰め、完全な行数を返す"""
        with open(log_path, "r+b") as fh:
            end = fh.seek(0, os.SEEK_END)
            keep = end
            if end > 0:
                fh.seek(end - 1)
                if fh.read(1) != b"\n":
                    keep = 0
                    position = end
                    while position > 0:
                        start = max(0, position - (1 << 16))
                        fh.seek(start)
                        cut = fh.read(position - start).rfind(b"\n")
                        if cut >= 0:
                            keep = start + cut + 1
                            break
                        position = start
            if keep < end:
                logger.warning("dropping partially written record at the end of %s (%d bytes)",
                               log_path, end - keep)
                fh.truncate(keep)
        return self._count_lines(log_path)

    def _rebuild_index(self, log_path: Path) -> None:
        """nodes.idx と edges.log から index.db を作り直す (1行ずつ読む)"""
        assert self.directory is not None
        self._conn.close()
        for name in (INDEX_DB, f"{INDEX_DB}-journal"):
            (self.directory / name).unlink(missing_ok=True)
        self._conn = self._connect()
        self._num_nodes = self._num_edges = 0

        index_path = self.directory / NODE_INDEX
        if index_path.exists():
            with open(index_path, encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    fields = line.rstrip("\n").split("\t")
                    if len(fields) != 3:
                        raise FormatError("expected ordinal, node_id, node_type", line_no, str(index_path))
                    ordinal = self._register_node(fields[1], fields[2], line_no)
                    if ordinal != int(fields[0]):
                        raise FormatError(f"ordinal {fields[0]} out of sequence", line_no, str(index_path))

        if log_path.exists():
            with open(log_path, encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    self._apply(parse_edge_line(line, line_no, str(log_path)), line_no)
        self._conn.commit()

    def _load_counters(self) -> None:
        self._num_nodes = self._conn.execute("SELECT COUNT(*) FROM nodes").fetchone()[0]
        self._num_edges = self._conn.execute("SELECT COUNT(*) FROM edges").fetchone()[0]
        row = self._conn.execute("SELECT ts FROM edges ORDER BY edge_id DESC LIMIT 1").fetchone()
        self._latest = row[0] if row else 0

    def sync(self) -> None:
        """ログを fsync し、ノード索引を追記し、索引 DB をコミットしてメタ情報を書き出す"""
        if self._conn is None:
            return
        if self._log is not None:
            self._log.flush()
            os.fsync(self._log.fileno())
        if self.directory is not None and self._num_nodes > self._indexed_nodes:
            rows = self._conn.execute(
                "SELECT ordinal, node_id, node_type FROM nodes WHERE ordinal >= ? ORDER BY ordinal",
                (self._indexed_nodes,),
            )
            with open(self.directory / NODE_INDEX, "a", encoding="utf-8") as fh:
                for ordinal, node_id, node_type in rows:
                    fh.write(f"{ordinal}\t{node_id}\t{node_type}\n")
            self._indexed_nodes = self._num_nodes
        self._conn.commit()
        if self.directory is None:
            return
        meta = {
            "version": STORE_VERSION,
            "graph_id": self.graph_id,
            "num_nodes": self._num_nodes,
            "num_edges": self._num_edges,
        }
        (self.directory / META_FILE).write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")

    def close(self) -> None:
        self.sync()
        if self._log is not None:
            self._log.close()
            self._log = None
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def __enter__(self) -> "GraphStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # --- 追記 ---

    def _lookup(self, node_id: str) -> Optional[Tuple[int, str]]:
        return self._conn.execute("SELECT ordinal, node_type FROM nodes WHERE node_id = ?", (node_id,)).fetchone()

    def _check(self, record: EdgeRecord, line_no: Optional[int]) -> None:
        """追記前の型整合チェック (状態は変更しない)"""
        for node_id, node_type in ((record.src_id, record.src_type), (record.dst_id, record.dst_type)):
            known = self._lookup(node_id)
            if known is not None and known[1] != node_type:
                raise TypeConflict(node_id, known[1], node_type, line_no)
        if record.src_id == record.dst_id and record.src_type != record.dst_type:
            raise TypeConflict(record.src_id, record.src_type, record.dst_type, line_no)

    def _register_node(self, node_id: str, node_type: str, line_no: Optional[int]) -> int:
        known = self._lookup(node_id)
        if known is not None:
            if known[1] != node_type:
                raise TypeConflict(node_id, known[1], node_type, line_no)
            return known[0]
        ordinal = self._num_nodes
        self._conn.execute("INSERT INTO nodes (ordinal, node_id, node_type) VALUES (?, ?, ?)",
                           (ordinal, node_id, node_type))
        self._num_nodes += 1
        return ordinal

    def _apply(self, record: EdgeRecord, line_no: Optional[int]) -> Tuple[int, int]:
        """索引を更新し (edge_id, dst ordinal) を返す (1エッジにつきカウンタ2件を加算)"""
        self._check(record, line_no)
        src = self._register_node(record.src_id, record.src_type, line_no)
        dst = self._register_node(record.dst_id, record.dst_type, line_no)
        edge_id = self._num_edges
        timestamp = edge_id if record.timestamp is None else int(record.timestamp)

        self._conn.execute("INSERT INTO edges (edge_id, src, dst, edge_type, ts) VALUES (?, ?, ?, ?, ?)",
                           (edge_id, src, dst, record.edge_type, timestamp))
        self._conn.execute(
            "UPDATE nodes SET first_seen = CASE WHEN first_seen < 0 THEN ? ELSE first_seen END, last_seen = ? "
            "WHERE ordinal IN (?, ?)",
            (timestamp, timestamp, src, dst),
        )
        self._conn.executemany(
            "INSERT INTO type_counts (ordinal, direction, edge_type, count) VALUES (?, ?, ?, 1) "
            "ON CONFLICT (ordinal, direction, edge_type) DO UPDATE SET count = count + 1",
            [(src, OUTGOING, record.edge_type), (dst, INCOMING, record.edge_type)],
        )
        self._num_edges += 1
        self._latest = timestamp
        return edge_id, dst

    def append_edge(self, record: EdgeRecord, line_no: Optional[int] = None) -> int:
        """エッジをログへ追記し、索引と実行ウィンドウを更新する"""
        edge_id, dst = self._apply(record, line_no)
        if self._log is not None:
            self._log.write(replace(record, timestamp=self._latest).to_line() + "\n")
            self._log.flush()
        self.window.observe(dst)
        return edge_id

    def append_line(self, line: str, line_no: Optional[int] = None) -> Optional[int]:
        """正規形式の1行を追記する (空行は無視)"""
        if not line.strip():
            return None
        return self.append_edge(parse_edge_line(line, line_no), line_no)

    def read_log(self) -> Iterator[EdgeRecord]:
        """エッジを edge_id 順に読み返す"""
        if self.directory is None:
            rows = self._conn.execute(
                "SELECT s.node_id, s.node_type, d.node_id, d.node_type, e.edge_type, e.ts FROM edges e "
                "JOIN nodes s ON s.ordinal = e.src JOIN nodes d ON d.ordinal = e.dst ORDER BY e.edge_id"
            )
            for row in rows:
                yield EdgeRecord(*row)
            return
        if self._log is not None:
            self._log.flush()
        with open(self.directory / EDGE_LOG, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                yield parse_edge_line(line, line_no)

    # --- 問い合わせ ---

    @property
    def num_nodes(self) -> int:
        return self._num_nodes

    @property
    def num_edges(self) -> int:
        return self._num_edges

    @property
    def latest_timestamp(self) -> int:
        return self._latest

    def has_node(self, node_id: str) -> bool:
        return self._lookup(node_id) is not None

    def ordinal(self, node_id: str) -> int:
        known = self._lookup(node_id)
        if known is None:
            raise UnknownNode(node_id)
        return known[0]

    def _neighbors(self, ordinals: Iterable[int], reverse: bool) -> Set[int]:
        near, far = ("dst", "src") if reverse else ("src", "dst")
        ordered = sorted(ordinals)
        found: Set[int] = set()
        for start in range(0, len(ordered), SQL_CHUNK):
            chunk = ordered[start:start + SQL_CHUNK]
            marks = ",".join("?" * len(chunk))
            rows = self._conn.execute(f"SELECT DISTINCT {far} FROM edges WHERE {near} IN ({marks})", chunk)
            found.update(row[0] for row in rows)
        return found

    def _within_hops(self, start: Iterable[int], hops: int, reverse: bool) -> Set[int]:
        seeds = set(start)
        seen = set(seeds)
        frontier = seeds
        for _ in range(hops):
            frontier = self._neighbors(frontier, reverse) - seen
            if not frontier:
                break
            seen |= frontier
        return seen - seeds

    def ancestors_of(self, ordinals: Iterable[int], hops: int = 2) -> Set[int]:
        return self._within_hops(ordinals, hops, reverse=True)

    def descendants_of(self, ordinals: Iterable[int], hops: int = 2) -> Set[int]:
        return self._within_hops(ordinals, hops, reverse=False)

    def _node_ids(self, ordinals: Iterable[int]) -> Set[str]:
        ordered = sorted(ordinals)
        found: Set[str] = set()
        for start in range(0, len(ordered), SQL_CHUNK):
            chunk = ordered[start:start + SQL_CHUNK]
            marks = ",".join("?" * len(chunk))
            found.update(row[0] for row in self._conn.execute(
                f"SELECT node_id FROM nodes WHERE ordinal IN ({marks})", chunk))
        return found

    def two_hop_ancestors(self, node_id: str) -> Set[str]:
        return self._node_ids(self.ancestors_of([self.ordinal(node_id)], 2))

    def two_hop_descendants(self, node_id: str) -> Set[str]:
        return self._node_ids(self.descendants_of([self.ordinal(node_id)], 2))

    def seen_times(self, node_ids: Iterable[str]) -> Dict[str, Tuple[int, int]]:
        """node_id → (first_seen, last_seen)"""
        ordered = sorted(set(node_ids))
        seen: Dict[str, Tuple[int, int]] = {}
        for start in range(0, len(ordered), SQL_CHUNK):
            chunk = ordered[start:start + SQL_CHUNK]
            marks = ",".join("?" * len(chunk))
            rows = self._conn.execute(
                f"SELECT node_id, first_seen, last_seen FROM nodes WHERE node_id IN ({marks})", chunk)
            seen.update((node_id, (first, last)) for node_id, first, last in rows)
        return seen

    # --- 局所グラフの読み込み ---

    def materialize(
        self,
        active: Iterable[int],
        related: Iterable[int] = (),
        snapshot_time: Optional[int] = None,
        with_history: bool = False,
    ) -> GraphSnapshot:
        """active ∪ related と、その間の誘導エッジだけをメモリ上の局所グラフにする"""
        active = set(active)
        members = sorted(active | set(related))
        self._conn.execute("DELETE FROM temp.members")
        self._conn.executemany("INSERT INTO temp.members (ordinal) VALUES (?)", ((v,) for v in members))

        graph = ProvenanceGraph(self.graph_id)
        local: Dict[int, int] = {}
        for ordinal, node_id, node_type in self._conn.execute(
            "SELECT n.ordinal, n.node_id, n.node_type FROM nodes n "
            "JOIN temp.members m ON m.ordinal = n.ordinal ORDER BY n.ordinal"
        ):
            local[ordinal] = graph.add_node(node_id, node_type)
        ids, types = graph.node_ids, graph.node_types
        for src, dst, edge_type, ts in self._conn.execute(
            "SELECT e.src, e.dst, e.edge_type, e.ts FROM edges e "
            "JOIN temp.members a ON a.ordinal = e.src JOIN temp.members b ON b.ordinal = e.dst "
            "ORDER BY e.edge_id"
        ):
            s, d = local[src], local[dst]
            graph.add_edge(EdgeRecord(ids[s], types[s], ids[d], types[d], edge_type, ts))

        history = None
        if with_history:
            history = IncrementalFeatureCounter()
            for ordinal, direction, edge_type, count in self._conn.execute(
                "SELECT t.ordinal, t.direction, t.edge_type, t.count FROM type_counts t "
                "JOIN temp.members m ON m.ordinal = t.ordinal"
            ):
                history.add(local[ordinal], edge_type, count, incoming=direction == INCOMING)

        local_active = frozenset(local[v] for v in active if v in local)
        subgraph = Subgraph(
            active=local_active,
            related=frozenset(local.values()) - local_active,
            edge_ids=np.arange(graph.num_edges, dtype=np.int64),
            snapshot_time=self._latest if snapshot_time is None else snapshot_time,
        )
        self._peak_paged = max(self._peak_paged, graph.num_nodes)
        return GraphSnapshot(graph, subgraph, np.array(sorted(local), dtype=np.int64), history)

    def snapshot(self, active: Iterable[int]) -> GraphSnapshot:
        """active + hops 以内の祖先を読み込んだ検知用スナップショット"""
        active = set(active)
        related = self.ancestors_of(active, self.config.hops)
        snapshot = self.materialize(active, related, self._latest,
                                    with_history=self.config.feature_scope is FeatureScope.HISTORY)
        if self.directory is not None:
            self.sync()
        return snapshot

    def neighborhood(self, node_id: str, hops: int = 2) -> ProvenanceGraph:
        """node と hops 以内の祖先・子孫の誘導サブグラフ (追跡用)"""
        center = self.ordinal(node_id)
        around = self.ancestors_of([center], hops) | self.descendants_of([center], hops)
        return self.materialize([center], around).graph

    def window_full(self) -> bool:
        return self.window.full()

    def flush_window(self) -> Optional[GraphSnapshot]:
        return self.window.flush()

    @property
    def peak_nodes(self) -> int:
        """メモリに載ったノード数の最大値 (ウィンドウの active 集合と読み込んだ局所グラフ)"""
        return max(self.window.peak_nodes, self._peak_paged)
