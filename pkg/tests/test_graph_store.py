#!/usr/bin/env python3
"""
🛡️ グラフストア テスト

追記・型整合・近傍探索・学習用分割・実行ウィンドウ・メモリ上限・ディスク復元と索引の再構築

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

import os
import sys

import networkx as nx
import numpy as np
import pytest

# パスを追加
sys.path.append(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from graph_builders import chain_graph, random_multigraph, two_role_records
from app.models.detector_config import DetectorConfig, SSSemantics
from app.models.errors import FormatError, TypeConflict, UnknownNode
from app.models.provenance_graph import EdgeRecord, ProvenanceGraph
from app.services.graph_store import (
    GraphStore, build_training_subgraphs, context_subgraph, parse_edge_line,
    two_hop_ancestors, two_hop_descendants, within_hops,
)


def to_networkx(graph: ProvenanceGraph) -> nx.MultiDiGraph:
    g = nx.MultiDiGraph()
    g.add_nodes_from(range(graph.num_nodes))
    g.add_edges_from(zip(graph.edge_src, graph.edge_dst))
    return g


def bfs_within(g: nx.MultiDiGraph, start: int, hops: int) -> set:
    reached = nx.single_source_shortest_path_length(g, start, cutoff=hops)
    return {v for v, d in reached.items() if 0 < d <= hops}


# ===== 入力解析 =====

def test_parse_edge_line_with_and_without_timestamp():
    record = parse_edge_line("a\tprocess\tb\tfile\twrite\t42\n")
    assert record == EdgeRecord("a", "process", "b", "file", "write", 42)
    assert parse_edge_line("a\tprocess\tb\tfile\twrite").timestamp is None


@pytest.mark.parametrize("line", [
    "a\tprocess\tb\tfile",
    "a\tprocess\tb\tfile\twrite\t1\textra",
    "a\tprocess\tb\tfile\twrite\tnoon",
    "\tprocess\tb\tfile\twrite",
])
def test_parse_edge_line_rejects_malformed(line):
    with pytest.raises(FormatError) as info:
        parse_edge_line(line, line_no=7)
    assert info.value.line_no == 7


# ===== 追記 =====

def whole(store: GraphStore) -> ProvenanceGraph:
    return store.materialize(range(store.num_nodes)).graph


def test_first_edge_creates_dense_ordinals():
    store = GraphStore.in_memory()
    assert store.append_edge(EdgeRecord("a", "process", "b", "file", "write", 10)) == 0
    assert (store.num_nodes, store.num_edges) == (2, 1)
    assert store.ordinal("a") == 0 and store.ordinal("b") == 1
    history = store.materialize([0, 1], with_history=True).history
    assert history.out_counts[0]["write"] == 1
    assert history.in_counts[1]["write"] == 1


def test_parallel_edges_and_self_loops_are_kept():
    store = GraphStore.in_memory()
    store.append_edge(EdgeRecord("a", "process", "b", "file", "write", 1))
    store.append_edge(EdgeRecord("a", "process", "b", "file", "write", 2))
    store.append_edge(EdgeRecord("a", "process", "a", "process", "exec", 3))
    graph = whole(store)
    assert graph.num_edges == 3
    assert graph.out_edges[0] == [0, 1, 2]


def test_missing_timestamp_defaults_to_edge_id():
    store = GraphStore.in_memory()
    store.append_line("a\tprocess\tb\tfile\twrite")
    store.append_line("b\tfile\tc\tprocess\tread")
    assert [r.timestamp for r in store.read_log()] == [0, 1]
    assert store.latest_timestamp == 1


def test_type_conflict_leaves_store_unchanged():
    store = GraphStore.in_memory()
    store.append_edge(EdgeRecord("a", "process", "b", "file", "write", 1))
    with pytest.raises(TypeConflict) as info:
        store.append_edge(EdgeRecord("b", "process", "c", "file", "write", 2), line_no=2)
    assert info.value.line_no == 2
    assert (store.num_nodes, store.num_edges) == (2, 1)
    assert not store.has_node("c")
    with pytest.raises(UnknownNode):
        store.ordinal("c")


def test_first_and_last_seen():
    store = GraphStore.in_memory()
    store.append_edge(EdgeRecord("a", "process", "b", "file", "write", 5))
    store.append_edge(EdgeRecord("c", "process", "b", "file", "write", 9))
    assert store.seen_times(["a", "b", "ghost"]) == {"a": (5, 5), "b": (5, 9)}
    assert store.latest_timestamp == 9


# ===== 近傍 =====

def test_two_hop_on_chain():
    graph = chain_graph(5)
    assert two_hop_ancestors(graph, "p2") == {"p0", "p1"}
    assert two_hop_descendants(graph, "p2") == {"p3", "p4"}
    assert two_hop_ancestors(graph, "p0") == set()


def test_two_hop_unknown_node():
    with pytest.raises(UnknownNode):
        two_hop_ancestors(chain_graph(3), "ghost")


@pytest.mark.parametrize("seed", range(10))
def test_within_hops_matches_networkx_bfs(seed):
    graph = random_multigraph(seed, n_nodes=15, n_edges=30)
    forward = to_networkx(graph)
    backward = forward.reverse(copy=True)
    for v in range(graph.num_nodes):
        for hops in (1, 2):
            assert within_hops(graph, [v], hops, reverse=False) == bfs_within(forward, v, hops) - {v}
            assert within_hops(graph, [v], hops, reverse=True) == bfs_within(backward, v, hops) - {v}


@pytest.mark.parametrize("seed", range(5))
def test_store_neighbourhood_queries_match_in_memory_graph(seed):
    graph = random_multigraph(seed, n_nodes=15, n_edges=30)
    store = GraphStore.in_memory()
    for record in graph.iter_records():
        store.append_edge(record)
    for node_id in graph.node_ids:
        assert store.two_hop_ancestors(node_id) == two_hop_ancestors(graph, node_id)
        assert store.two_hop_descendants(node_id) == two_hop_descendants(graph, node_id)
        local = store.neighborhood(node_id)
        expected = {node_id} | two_hop_ancestors(graph, node_id) | two_hop_descendants(graph, node_id)
        assert set(local.node_ids) == expected


def test_context_subgraph_edges_are_induced():
    graph = chain_graph(6)
    sub = context_subgraph(graph, [graph.ordinal("p4")], hops=2)
    assert sub.active == frozenset({4})
    assert sub.related == frozenset({2, 3})
    assert sub.edge_ids.tolist() == [2, 3]


# ===== 学習用分割 =====

def test_training_split_single_subgraph_when_small():
    graph = chain_graph(4)
    subs = build_training_subgraphs(graph, split_size=10)
    assert len(subs) == 1
    assert subs[0].active == frozenset(range(4))


def test_training_split_partitions_nodes():
    graph = ProvenanceGraph.from_records(two_role_records(10, 2))
    subs = build_training_subgraphs(graph, split_size=7, seed=3)
    actives = [s.active for s in subs]
    assert all(len(a) <= 7 for a in actives)
    assert sum(len(a) for a in actives) == graph.num_nodes
    assert frozenset().union(*actives) == frozenset(range(graph.num_nodes))
    assert [s.active for s in build_training_subgraphs(graph, 7, seed=3)] == actives


def test_training_split_empty_graph():
    assert build_training_subgraphs(ProvenanceGraph(), split_size=5) == []


# ===== 実行ウィンドウ =====

def test_window_flushes_every_ss_edges():
    config = DetectorConfig(SS=2)
    store = GraphStore.in_memory(config)
    snapshots = []
    for i in range(5):
        store.append_edge(EdgeRecord(f"p{i}", "process", f"p{i + 1}", "process", "fork", i))
        if store.window_full():
            snapshots.append(store.flush_window())
    assert len(snapshots) == 2
    assert snapshots[0].active_ids == {"p1", "p2"}
    assert snapshots[0].snapshot_time == 1
    assert snapshots[1].active_ids == {"p3", "p4"}
    tail = store.flush_window()
    assert tail is not None and tail.active_ids == {"p5"}
    assert store.flush_window() is None


def test_window_marks_two_hop_descendants():
    store = GraphStore.in_memory(DetectorConfig(SS=100))
    for i in range(4):
        store.append_edge(EdgeRecord(f"p{i + 1}", "process", f"p{i + 2}", "process", "fork", i))
    # 既存の p1 に入辺が来ると p1 の子孫 2 hop も active
    store.flush_window()
    store.append_edge(EdgeRecord("p0", "process", "p1", "process", "fork", 10))
    snapshot = store.flush_window()
    assert snapshot.active_ids == {"p1", "p2", "p3"}
    assert snapshot.related_ids == {"p0"}
    # 局所 ordinal はストア全体の順序を保つ
    assert snapshot.ordinals.tolist() == sorted(store.ordinal(n) for n in snapshot.graph.node_ids)
    assert list(snapshot.graph.node_ids) == ["p1", "p2", "p3", "p0"]


def test_window_active_node_semantics():
    config = DetectorConfig(SS=3, ss_semantics=SSSemantics.ACTIVE_NODES)
    store = GraphStore.in_memory(config)
    store.append_edge(EdgeRecord("a", "process", "b", "process", "fork", 0))
    store.append_edge(EdgeRecord("a", "process", "b", "process", "fork", 1))
    assert not store.window_full()
    store.append_edge(EdgeRecord("a", "process", "c", "process", "fork", 2))
    store.append_edge(EdgeRecord("a", "process", "d", "process", "fork", 3))
    assert store.window_full()


def test_peak_nodes_tracks_largest_snapshot():
    store = GraphStore.in_memory(DetectorConfig(SS=100))
    for record in two_role_records(3, 0):
        store.append_edge(record)
    snapshot = store.flush_window()
    assert store.peak_nodes == snapshot.size == 12


@pytest.mark.parametrize("on_disk", [False, True])
def test_memory_high_water_stays_bounded_by_the_window(tmp_path, on_disk):
    config = DetectorConfig(SS=8)
    store = GraphStore.open(str(tmp_path), config) if on_disk else GraphStore.in_memory(config)
    largest = 0
    with store:
        for record in two_role_records(200, 0, prefix="long"):
            store.append_edge(record)
            if store.window_full():
                largest = max(largest, store.flush_window().graph.num_nodes)
        assert (store.num_nodes, store.num_edges) == (800, 800)
        assert largest <= 8
        assert store.peak_nodes <= 8
        # ストア本体は全体グラフも全ノードのカウンタも保持しない
        assert not hasattr(store, "graph") and not hasattr(store, "counter")
        assert store.window.flushes == 100


# ===== 永続化 =====

def snapshot_state(store: GraphStore):
    snapshot = store.materialize(range(store.num_nodes), with_history=True)
    g = snapshot.graph
    counts = {v: (dict(snapshot.history.in_counts[v]), dict(snapshot.history.out_counts[v]))
              for v in range(g.num_nodes)}
    return list(g.node_ids), list(g.node_types), list(g.edge_src), list(g.edge_dst), list(g.timestamps), counts


def test_reopen_recovers_graph(tmp_path):
    records = two_role_records(3, 1)
    with GraphStore.open(str(tmp_path)) as store:
        for record in records:
            store.append_edge(record)
        before = snapshot_state(store)
        seen = store.seen_times([r.src_id for r in records])

    with GraphStore.open(str(tmp_path)) as reopened:
        assert snapshot_state(reopened) == before
        assert list(reopened.read_log()) == records
        assert reopened.seen_times([r.src_id for r in records]) == seen
        assert reopened.latest_timestamp == records[-1].timestamp
    assert sorted(p.name for p in tmp_path.iterdir()) == ["edges.log", "index.db", "meta.json", "nodes.idx"]


@pytest.mark.parametrize("lost", [["index.db"], ["index.db", "nodes.idx"]])
def test_index_is_rebuilt_from_the_log(tmp_path, lost):
    records = two_role_records(4, 2)
    with GraphStore.open(str(tmp_path)) as store:
        for record in records:
            store.append_edge(record)
        before = snapshot_state(store)
    for name in lost:
        (tmp_path / name).unlink()

    with GraphStore.open(str(tmp_path)) as rebuilt:
        assert (rebuilt.num_nodes, rebuilt.num_edges) == (len(before[0]), len(records))
        assert snapshot_state(rebuilt) == before
        assert rebuilt.two_hop_descendants(records[0].src_id) == {records[0].dst_id, records[1].dst_id,
                                                                  records[2].dst_id}
    assert (tmp_path / "nodes.idx").read_text(encoding="utf-8").count("\n") == len(before[0])


def test_reopen_drops_partial_trailing_line(tmp_path):
    with GraphStore.open(str(tmp_path)) as store:
        store.append_edge(EdgeRecord("a", "process", "b", "file", "write", 1))
    with open(tmp_path / "edges.log", "a", encoding="utf-8") as fh:
        fh.write("b\tfile\tc\tproc")

    with GraphStore.open(str(tmp_path)) as reopened:
        assert reopened.num_edges == 1
        reopened.append_edge(EdgeRecord("b", "file", "c", "process", "read", 2))
    with GraphStore.open(str(tmp_path)) as again:
        assert (again.num_nodes, again.num_edges) == (3, 2)
        assert [r.dst_id for r in again.read_log()] == ["b", "c"]


def test_corrupt_meta_raises(tmp_path):
    (tmp_path / "meta.json").write_text("{not json", encoding="utf-8")
    with pytest.raises(FormatError):
        GraphStore.open(str(tmp_path))


def test_in_memory_read_log_replays_records():
    store = GraphStore.in_memory()
    records = two_role_records(2, 0)
    for record in records:
        store.append_edge(record)
    assert list(store.read_log()) == records
    subs = build_training_subgraphs(whole(store), split_size=100)
    assert np.array_equal(subs[0].edge_ids, np.arange(len(records)))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
