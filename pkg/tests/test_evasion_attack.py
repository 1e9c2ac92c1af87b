#!/usr/bin/env python3
"""
🛡️ 回避攻撃 テスト

予算球・整数格子・射影勾配降下・近傍への配分・エッジ編集への実現・δ=0 ベースライン

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

import itertools
import os
import sys

import numpy as np
import pytest

# パスを追加
sys.path.append(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from graph_builders import attacked_graph, fast_config, random_multigraph, two_role_graph
from app.models.detector_config import DetectorConfig
from app.models.errors import EmptyClass, InfeasibleBudget, NegativeCount
from app.models.feature_types import FeatureTable, swap_direction
from app.models.provenance_graph import EdgeRecord, LabeledGraph, ProvenanceGraph
from app.models.role_model import Submodel
from app.services.alert_tracer import alert_tracer
from app.services.evasion_attack import (
    AttackFlag, AttackKind, PEER_PREFIX, couple_neighbors, evasion_engine,
)
from app.services.feature_extractor import feature_extractor
from app.services.multi_model import multi_model_engine


def table_of(vectors, labels) -> FeatureTable:
    vectors = np.asarray(vectors, dtype=np.int64)
    return FeatureTable(np.arange(len(vectors), dtype=np.int64), np.asarray(labels, dtype=np.int64), vectors)


def linear_submodel(weight) -> Submodel:
    """隣接集約を使わない1層モデル: z = W[:, :d] x"""
    weight = np.asarray(weight, dtype=np.float64)
    return Submodel([weight], [np.zeros(weight.shape[0])])


def brute_force_nearest(x, target, radius):
    """球内の非負整数点で target に最も近い距離"""
    best = np.inf
    ranges = [range(max(0, int(np.ceil(v - radius))), int(np.floor(v + radius)) + 1) for v in x]
    for p in itertools.product(*ranges):
        p = np.array(p)
        if np.linalg.norm(p - x) < radius:
            best = min(best, float(np.linalg.norm(p - target)))
    return best


@pytest.fixture(scope="module")
def ensemble():
    trained, _ = multi_model_engine.train_on_graph_sequence([two_role_graph(40, 5, prefix="train")], fast_config())
    return trained


# ===== 訓練データ知識 =====

def test_zero_budget_is_infeasible():
    training = table_of([[3, 3]], [0])
    result = evasion_engine.attack_with_training_data(np.array([10, 0]), 0, training, 0.0)
    assert result.flag is AttackFlag.INFEASIBLE_BUDGET
    assert not result.changed
    with pytest.raises(InfeasibleBudget):
        evasion_engine.attack_with_training_data(np.array([10, 0]), 0, training, 0.0, strict=True)


def test_radius_of_one_is_infeasible():
    # ‖x‖ = 1, δ = 1 → 半径 1 の開球には x 以外の整数点が無い
    result = evasion_engine.attack_with_training_data(np.array([1, 0]), 0, table_of([[0, 5]], [0]), 1.0)
    assert result.flag is AttackFlag.INFEASIBLE_BUDGET


def test_reference_inside_budget_is_taken_exactly():
    training = table_of([[0, 10], [9, 1], [1, 1]], [0, 0, 1])
    result = evasion_engine.attack_with_training_data(np.array([10, 0]), 0, training, 0.5)
    assert result.reference.tolist() == [9, 1]
    assert result.x_hat.tolist() == [9, 1]
    assert result.within_budget()


@pytest.mark.parametrize("delta", [0.2, 0.5, 0.8])
def test_exhaustive_lattice_finds_closest_point(delta):
    x = np.array([10, 0, 4])
    training = table_of([[3, 3, 0], [0, 20, 9]], [0, 0])
    config = DetectorConfig(exhaustive_search=True)
    result = evasion_engine.attack_with_training_data(x, 0, training, delta, config)
    assert result.flag is AttackFlag.NONE
    assert result.within_budget()
    assert result.x_hat.dtype.kind == "i" and (result.x_hat >= 0).all()
    radius = delta * np.linalg.norm(x)
    reached = float(np.linalg.norm(result.x_hat - result.reference))
    assert reached == pytest.approx(brute_force_nearest(x, result.reference, radius))


@pytest.mark.parametrize("delta", [0.2, 0.5, 0.8])
def test_default_search_rounds_toward_reference(delta):
    # 既定では格子の全探索をせず、半切り上げと予算内への戻しで求める
    x = np.array([10, 0, 4])
    training = table_of([[3, 3, 0], [0, 20, 9]], [0, 0])
    result = evasion_engine.attack_with_training_data(x, 0, training, delta)
    assert not DetectorConfig().exhaustive_search
    assert result.within_budget()
    assert result.x_hat.dtype.kind == "i" and (result.x_hat >= 0).all()
    radius = delta * np.linalg.norm(x)
    reached = float(np.linalg.norm(result.x_hat - result.reference))
    assert reached < float(np.linalg.norm(x - result.reference))
    assert reached >= brute_force_nearest(x, result.reference, radius) - 1e-9


def test_rounding_path_stays_in_budget():
    x = np.array([30, 0, 12, 7, 0, 5])
    training = table_of([[0, 25, 0, 0, 9, 5]], [2])
    # 箱が上限を超えると全探索の指定があっても丸めに落ちる
    config = DetectorConfig(exhaustive_search=True, exhaustive_limit=10)
    result = evasion_engine.attack_with_training_data(x, 2, training, 0.4, config)
    assert result.within_budget()
    assert (result.x_hat >= 0).all()
    assert np.linalg.norm(result.x_hat - result.reference) < np.linalg.norm(x - result.reference)


def test_missing_class_raises():
    with pytest.raises(EmptyClass):
        evasion_engine.attack_with_training_data(np.array([1, 1]), 3, table_of([[1, 1]], [0]), 0.5)


# ===== モデル知識 =====

def test_gradient_attack_reaches_lattice_optimum():
    # クラス0のロジット x0 - x1 を上げるほど損失が下がる
    submodel = linear_submodel([[1, -1, 0, 0], [0, 0, 0, 0]])
    result = evasion_engine.attack_with_model(np.array([2, 2]), 0, submodel, 0.9, steps=20)
    assert result.flag is AttackFlag.NONE
    assert result.within_budget()
    assert int(result.x_hat[0] - result.x_hat[1]) == 3
    assert result.loss_after < result.loss_before
    assert len(result.steps) == 20


def test_flat_loss_returns_x_unchanged():
    submodel = linear_submodel(np.zeros((2, 4)))
    result = evasion_engine.attack_with_model(np.array([4, 3]), 1, submodel, 0.5, steps=10)
    assert result.flag is AttackFlag.NO_IMPROVEMENT
    assert not result.changed
    assert result.loss_after == result.loss_before


def test_gradient_attack_infeasible_budget():
    submodel = linear_submodel([[1, -1, 0, 0], [0, 0, 0, 0]])
    result = evasion_engine.attack_with_model(np.array([1, 0]), 0, submodel, 0.5)
    assert result.flag is AttackFlag.INFEASIBLE_BUDGET
    with pytest.raises(InfeasibleBudget):
        evasion_engine.attack_with_model(np.array([1, 0]), 0, submodel, 0.5, strict=True)


def test_couple_neighbors_spreads_swapped_change():
    x = np.array([1, 0, 0, 2])
    x_hat = np.array([3, 0, 0, 1])
    neighbors = np.zeros((2, 4))
    coupled = couple_neighbors(x, x_hat, neighbors)
    # 変化 (入出力入れ替え後) [0, -1, 2, 0] を整数で配分し、余りは先頭の近傍へ
    assert coupled.tolist() == [[0, 0, 1, 0], [0, -1, 1, 0]]
    assert couple_neighbors(x, x_hat, np.zeros((0, 4))).shape == (0, 4)


@pytest.mark.parametrize("seed", range(5))
def test_coupled_neighbor_changes_are_integral_and_sum_to_the_edit(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 6, size=6)
    x_hat = np.maximum(x + rng.integers(-3, 4, size=6), 0)
    base = rng.integers(0, 4, size=(int(rng.integers(1, 5)), 6)).astype(np.float64)
    shift = couple_neighbors(x, x_hat, base) - base
    assert np.array_equal(shift, np.round(shift))
    assert shift.sum(axis=0).tolist() == swap_direction(x_hat - x).tolist()
    assert (shift.max(axis=0) - shift.min(axis=0) <= 1).all()


# ===== 実現 =====

def small_graph() -> ProvenanceGraph:
    return ProvenanceGraph.from_records([
        EdgeRecord("a", "process", "f1", "file", "write", 0),
        EdgeRecord("a", "process", "f2", "file", "write", 1),
        EdgeRecord("f3", "file", "a", "process", "read", 2),
        EdgeRecord("a", "process", "a", "process", "write", 3),
    ])


def test_realized_edits_reproduce_target_features():
    graph = small_graph()
    maps = feature_extractor.build_type_maps([graph])
    a = graph.ordinal("a")
    x = feature_extractor.extract_features(graph, maps).vectors[a]
    assert x.tolist() == [1, 1, 3, 0]
    x_hat = np.array([1, 2, 2, 0])

    edits = evasion_engine.realize_perturbation(graph, "a", x, x_hat, maps)
    assert [e.action for e in edits] == ["add", "remove"]
    added = edits[0].record
    assert (added.src_id, added.src_type, added.dst_id) == (f"{PEER_PREFIX}0", "file", "a")
    # 自己ループは削除候補にしない
    assert edits[1].edge_id == 1

    edited = evasion_engine.apply_edits(graph, edits)
    after = feature_extractor.extract_features(edited, maps).vectors[edited.ordinal("a")]
    assert after.tolist() == x_hat.tolist()
    assert edited.timestamps[-1] == 4


def test_realize_rejects_impossible_changes():
    graph = small_graph()
    maps = feature_extractor.build_type_maps([graph])
    x = np.array([1, 1, 3, 0])
    with pytest.raises(NegativeCount):
        evasion_engine.realize_perturbation(graph, "a", x, np.array([1, 1, -1, 0]), maps)
    with pytest.raises(NegativeCount):
        evasion_engine.realize_perturbation(graph, "a", x, np.array([1, 1, 0, 0]), maps)


def test_peer_type_override_from_config():
    graph = small_graph()
    maps = feature_extractor.build_type_maps([graph])
    config = DetectorConfig(peer_node_types="read:process")
    edits = evasion_engine.realize_perturbation(graph, "a", np.array([1, 1, 3, 0]), np.array([1, 2, 3, 0]), maps, config)
    assert edits[0].record.src_type == "process"


def adjacent_graph() -> ProvenanceGraph:
    """a -fork-> b, a -write-> c, d -read-> b (特徴量の並び: 入 fork/write/read, 出 fork/write/read)"""
    return ProvenanceGraph.from_records([
        EdgeRecord("a", "process", "b", "process", "fork", 0),
        EdgeRecord("a", "process", "c", "file", "write", 1),
        EdgeRecord("d", "file", "b", "process", "read", 2),
    ], "adjacent")


def realized_vectors(graph: ProvenanceGraph, maps, node_ids):
    table = feature_extractor.extract_features(graph, maps)
    return {n: table.vectors[graph.ordinal(n)].tolist() for n in node_ids}


def test_adjacent_targets_are_realized_against_the_edited_graph():
    graph = adjacent_graph()
    maps = feature_extractor.build_type_maps([graph])
    assert realized_vectors(graph, maps, "ab") == {"a": [0, 0, 0, 1, 1, 0], "b": [1, 0, 1, 0, 0, 0]}
    # a は fork を手放し、b は fork を保ったまま read を手放す
    targets = {"a": np.array([0, 0, 0, 0, 1, 0]), "b": np.array([1, 0, 0, 0, 0, 0])}
    edited = evasion_engine.realize_targets(graph, targets, maps)
    assert realized_vectors(edited, maps, "ab") == {n: v.tolist() for n, v in targets.items()}


def test_removing_an_edge_to_a_realized_node_compensates_it():
    graph = adjacent_graph()
    maps = feature_extractor.build_type_maps([graph])
    # a は write を1本足し、b は a からの fork を手放す
    targets = {"a": np.array([0, 0, 0, 1, 2, 0]), "b": np.array([0, 0, 1, 0, 0, 0])}
    edited = evasion_engine.realize_targets(graph, targets, maps)
    assert realized_vectors(edited, maps, "ab") == {n: v.tolist() for n, v in targets.items()}
    forks = [r for r in edited.iter_records() if r.edge_type == "fork"]
    assert [(r.src_id, r.dst_id.startswith(PEER_PREFIX)) for r in forks] == [("a", True)]


def test_protected_edges_are_removed_last():
    graph = ProvenanceGraph.from_records([
        EdgeRecord("a", "process", "b", "process", "read", 0),
        EdgeRecord("e", "process", "b", "process", "read", 1),
    ])
    maps = feature_extractor.build_type_maps([graph])
    edits = evasion_engine.realize_perturbation(graph, "b", np.array([2, 0]), np.array([1, 0]), maps,
                                                protected=["e"])
    assert [(e.action, e.edge_id) for e in edits] == [("remove", 0)]


def test_realized_targets_round_trip_on_random_graph():
    graph = random_multigraph(11, n_nodes=200, n_edges=900, graph_id="sweep", self_loops=False)
    maps = feature_extractor.build_type_maps([graph])
    table = feature_extractor.extract_features(graph, maps)
    rng = np.random.default_rng(3)
    targets = {}
    for v in rng.choice(graph.num_nodes, size=40, replace=False).tolist():
        x = table.vectors[v]
        targets[graph.node_ids[v]] = np.maximum(x + rng.integers(-2, 3, size=len(x)), 0)
    edited = evasion_engine.realize_targets(graph, targets, maps)
    after = realized_vectors(edited, maps, targets)
    assert after == {n: v.tolist() for n, v in targets.items()}


# ===== 評価 =====

def test_zero_delta_row_equals_baseline(ensemble):
    graph, injected = attacked_graph(n_inject=3, n_a=10, n_b=2, prefix="ev")
    labeled = LabeledGraph(graph, True, "attack", set(injected))
    table = evasion_engine.evaluate_evasion(ensemble, [labeled], [0.0], [AttackKind.MODEL],
                                            config=fast_config(attack_steps=10))
    flagged = {graph.node_ids[v] for v in multi_model_engine.detect_graph(graph, ensemble).anomalous}
    baseline = alert_tracer.score_node_level(graph, injected, flagged, hop_credit=False)
    row = table.iloc[0]
    assert (row["TP"], row["FN"], row["FP"]) == (baseline.tp, baseline.fn, baseline.fp)
    assert row["FNR"] == 0.0
    assert row["attacked"] == 0


def test_attack_graph_keeps_edits_within_budget(ensemble):
    graph, injected = attacked_graph(n_inject=2, n_a=10, n_b=2, prefix="pgd")
    labeled = LabeledGraph(graph, True, "attack", set(injected))
    config = fast_config(attack_steps=10)
    for kind in (AttackKind.MODEL, AttackKind.MODEL_NEIGHBORS):
        edited, results = evasion_engine.attack_graph(labeled, ensemble, kind, 2.0, None, config)
        assert len(results) == len(injected)
        assert all(r.within_budget() and (r.x_hat >= 0).all() for r in results)
        assert all(r.changed or r.flag is not AttackFlag.NONE for r in results)
        table = feature_extractor.extract_features(edited, ensemble.maps)
        for node_id, result in zip(sorted(injected), results):
            assert table.vectors[edited.ordinal(node_id)].tolist() == result.x_hat.tolist()


def test_training_data_attack_needs_samples(ensemble):
    graph, injected = attacked_graph(n_inject=1, n_a=4, n_b=1, prefix="td")
    labeled = LabeledGraph(graph, True, "attack", set(injected))
    with pytest.raises(ValueError):
        evasion_engine.evaluate_evasion(ensemble, [labeled], [0.5], [AttackKind.TRAINING_DATA])
    samples = evasion_engine.training_samples([two_role_graph(5, 1)], ensemble.maps)
    table = evasion_engine.evaluate_evasion(ensemble, [labeled], [0.5], [AttackKind.TRAINING_DATA], samples)
    assert table.iloc[0]["attack_kind"] == "train-data"
    assert table.iloc[0]["attacked"] == 1


def test_training_data_attack_barely_moves_fnr(ensemble):
    graph, injected = attacked_graph(n_inject=3, n_a=10, n_b=2, prefix="tdf")
    labeled = LabeledGraph(graph, True, "attack", set(injected))
    samples = evasion_engine.training_samples([two_role_graph(40, 5, prefix="train")], ensemble.maps)
    table = evasion_engine.evaluate_evasion(ensemble, [labeled], [0.0, 0.2, 0.5, 0.7],
                                            [AttackKind.TRAINING_DATA], samples)
    baseline = table.iloc[0]["FNR"]
    assert (table["FNR"] - baseline).abs().max() <= 0.05
    assert table["attacked"].tolist()[1:] == [len(injected)] * 3


def test_crafted_points_stay_integral_and_in_budget_over_200_nodes():
    graph = random_multigraph(5, n_nodes=200, n_edges=700, graph_id="sweep200", self_loops=False)
    bank = random_multigraph(6, n_nodes=200, n_edges=700, graph_id="bank", self_loops=False)
    maps = feature_extractor.build_type_maps([graph, bank])
    table = feature_extractor.extract_features(graph, maps)
    samples = evasion_engine.training_samples([bank], maps)
    weight = np.random.default_rng(0).normal(size=(maps.n_node_types, 2 * maps.feature_width))
    submodel = linear_submodel(weight)
    config = DetectorConfig(attack_steps=5)

    crafted = 0
    for delta in (0.3, 0.6):
        for v in range(graph.num_nodes):
            x, label = table.vectors[v], int(table.labels[v])
            for result in (evasion_engine.attack_with_training_data(x, label, samples, delta, config),
                           evasion_engine.attack_with_model(x, label, submodel, delta, config=config)):
                assert result.x_hat.dtype.kind == "i"
                assert (result.x_hat >= 0).all()
                assert result.within_budget()
                crafted += 1
    assert graph.num_nodes >= 195
    assert crafted == 4 * graph.num_nodes


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
