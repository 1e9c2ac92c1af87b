#!/usr/bin/env python3
"""
🛡️ 特徴量抽出 テスト

型マップの初出順・入出力ヒストグラム・逐次カウンタとバッチ再集計の一致

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

import os
import sys

import numpy as np
import pytest

# パスを追加
sys.path.append(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from graph_builders import random_multigraph, two_role_graph
from app.models.detector_config import DetectorConfig, FeatureScope, UnknownTypePolicy
from app.models.errors import UnknownType
from app.models.provenance_graph import EdgeRecord, ProvenanceGraph
from app.services.feature_extractor import IncrementalFeatureCounter, feature_extractor
from app.services.graph_store import GraphStore, context_subgraph


def brute_force(graph: ProvenanceGraph, maps, edge_ids=None):
    """エッジを1本ずつ数え直す"""
    n_e = maps.n_edge_types
    vectors = {v: np.zeros(2 * n_e, dtype=np.int64) for v in range(graph.num_nodes)}
    for e in (range(graph.num_edges) if edge_ids is None else edge_ids):
        t = maps.edge_type_map[graph.edge_types[e]]
        vectors[graph.edge_dst[e]][t] += 1
        vectors[graph.edge_src[e]][n_e + t] += 1
    return vectors


# ===== 型マップ =====

def test_type_maps_follow_first_appearance():
    graph = ProvenanceGraph.from_records([
        EdgeRecord("a", "process", "b", "file", "write", 0),
        EdgeRecord("b", "file", "c", "socket", "send", 1),
        EdgeRecord("a", "process", "c", "socket", "write", 2),
    ])
    maps = feature_extractor.build_type_maps([graph])
    assert maps.node_type_names() == ["process", "file", "socket"]
    assert maps.edge_type_names() == ["write", "send"]
    assert maps.frozen
    with pytest.raises(UnknownType):
        maps.register_edge_type("exec")


def test_fingerprint_changes_with_maps():
    a = feature_extractor.build_type_maps([two_role_graph(1, 0)])
    b = feature_extractor.build_type_maps([random_multigraph(0)])
    assert a.fingerprint() == feature_extractor.build_type_maps([two_role_graph(2, 1)]).fingerprint()
    assert a.fingerprint() != b.fingerprint()


# ===== 特徴量 =====

def test_single_write_edge():
    graph = ProvenanceGraph.from_records([EdgeRecord("a", "process", "b", "file", "write", 0)])
    maps = feature_extractor.build_type_maps([graph])
    table = feature_extractor.extract_features(graph, maps)
    assert table.feature(0).vector == (0, 1)
    assert table.feature(1).vector == (1, 0)
    assert table.labels.tolist() == [0, 1]


def test_self_loop_counts_in_and_out():
    graph = ProvenanceGraph.from_records([EdgeRecord("a", "process", "a", "process", "exec", 0)])
    maps = feature_extractor.build_type_maps([graph])
    assert feature_extractor.extract_features(graph, maps).feature(0).vector == (1, 1)


def test_isolated_context_node_has_zero_vector():
    graph = ProvenanceGraph.from_records([EdgeRecord("a", "process", "b", "file", "write", 0)])
    graph.add_node("lonely", "process")
    maps = feature_extractor.build_type_maps([graph])
    table = feature_extractor.extract_features(graph, maps)
    assert table.feature(graph.ordinal("lonely")).vector == (0, 0)


@pytest.mark.parametrize("seed", range(5))
def test_vector_sums_equal_degrees(seed):
    graph = random_multigraph(seed)
    maps = feature_extractor.build_type_maps([graph])
    table = feature_extractor.extract_features(graph, maps)
    n_e = maps.n_edge_types
    for v in range(graph.num_nodes):
        row = table.vectors[table.row_of(v)]
        assert row[:n_e].sum() == len(graph.in_edges[v])
        assert row[n_e:].sum() == len(graph.out_edges[v])


def test_subgraph_features_count_only_induced_edges():
    graph = random_multigraph(3, n_nodes=10, n_edges=30)
    maps = feature_extractor.build_type_maps([graph])
    sub = context_subgraph(graph, [0, 1, 2], hops=1)
    table = feature_extractor.extract_features(graph, maps, sub)
    expected = brute_force(graph, maps, sub.edge_ids.tolist())
    assert table.nodes.tolist() == sub.nodes
    for v in sub.nodes:
        assert np.array_equal(table.vectors[table.row_of(v)], expected[v])


def test_restrict_keeps_rows_and_unknown():
    graph = random_multigraph(1)
    maps = feature_extractor.build_type_maps([graph])
    table = feature_extractor.extract_features(graph, maps)
    table.unknown = {2, 5}
    small = table.restrict([5, 1])
    assert small.nodes.tolist() == [1, 5]
    assert small.unknown == {5}
    assert np.array_equal(small.vectors[1], table.vectors[table.row_of(5)])


# ===== 未知の型 =====

def test_unknown_types_by_policy():
    train = ProvenanceGraph.from_records([EdgeRecord("a", "process", "b", "file", "write", 0)])
    maps = feature_extractor.build_type_maps([train])
    test = ProvenanceGraph.from_records([
        EdgeRecord("a", "process", "b", "file", "write", 0),
        EdgeRecord("a", "process", "s", "socket", "connect", 1),
    ])
    with pytest.raises(UnknownType):
        feature_extractor.extract_features(test, maps, policy=UnknownTypePolicy.ERROR)

    flagged = feature_extractor.extract_features(test, maps, policy=UnknownTypePolicy.FLAG)
    assert flagged.unknown == {0, 2}
    assert flagged.labels[2] == -1

    ignored = feature_extractor.extract_features(test, maps, policy=UnknownTypePolicy.IGNORE)
    assert ignored.unknown == {2}
    assert ignored.feature(0).vector == (0, 1)


# ===== 逐次カウンタ =====

@pytest.mark.parametrize("seed", range(100))
def test_streaming_counter_equals_batch_recount(seed):
    graph = random_multigraph(seed, n_nodes=8 + seed % 7, n_edges=10 + seed % 40)
    maps = feature_extractor.build_type_maps([graph])
    store = GraphStore.in_memory()
    for record in graph.iter_records():
        store.append_edge(record)
    history = store.materialize(range(store.num_nodes), with_history=True).history

    expected = brute_force(graph, maps)
    table = feature_extractor.extract_features(graph, maps)
    for v in range(graph.num_nodes):
        assert np.array_equal(history.vector(v, maps), expected[v])
        assert np.array_equal(table.vectors[table.row_of(v)], expected[v])


def test_counter_features_match_whole_graph_on_full_snapshot():
    graph = two_role_graph(3, 1)
    maps = feature_extractor.build_type_maps([graph])
    store = GraphStore.in_memory(DetectorConfig(feature_scope=FeatureScope.HISTORY))
    for record in graph.iter_records():
        store.append_edge(record)
    snapshot = store.materialize(range(store.num_nodes), with_history=True)
    from_counter = feature_extractor.features_from_counter(snapshot.graph, maps, snapshot.history,
                                                           snapshot.subgraph)
    batch = feature_extractor.extract_features(snapshot.graph, maps, snapshot.subgraph)
    assert np.array_equal(from_counter.vectors, batch.vectors)


def test_history_counts_cover_edges_outside_the_snapshot():
    store = GraphStore.in_memory()
    store.append_edge(EdgeRecord("a", "process", "b", "file", "write", 0))
    store.append_edge(EdgeRecord("c", "process", "b", "file", "write", 1))
    store.append_edge(EdgeRecord("b", "file", "d", "process", "read", 2))
    maps = feature_extractor.build_type_maps([store.materialize(range(store.num_nodes)).graph])
    # b だけを読み込んでも履歴カウンタは全エッジを数える
    snapshot = store.materialize([store.ordinal("b")], with_history=True)
    assert snapshot.graph.num_nodes == 1 and snapshot.graph.num_edges == 0
    assert snapshot.history.vector(0, maps).tolist() == [2, 0, 0, 1]


def test_counter_reports_unseen_edge_types():
    counter = IncrementalFeatureCounter()
    maps = feature_extractor.build_type_maps([ProvenanceGraph.from_records(
        [EdgeRecord("a", "process", "b", "file", "write", 0)])])
    counter.observe(0, 1, "write")
    counter.observe(0, 1, "mmap")
    assert counter.vector(0, maps).tolist() == [0, 1]
    assert counter.unseen_edge_types(1, maps) == {"mmap"}


def test_dump_features(tmp_path):
    graph = ProvenanceGraph.from_records([EdgeRecord("a", "process", "b", "file", "write", 0)])
    maps = feature_extractor.build_type_maps([graph])
    path = tmp_path / "features.tsv"
    feature_extractor.dump_features(feature_extractor.extract_features(graph, maps), graph, str(path))
    assert path.read_text(encoding="utf-8").splitlines() == ["a\t0\t0,1", "b\t1\t1,0"]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
