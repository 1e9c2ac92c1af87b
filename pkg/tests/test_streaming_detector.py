#!/usr/bin/env python3
"""
🛡️ ストリーミング検知 テスト

良性リプレイ・待機時間 T を経た注入ノードのアラート・空ストリーム・非同期パイプライン

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

import os
import sys

import pytest

# パスを追加
sys.path.append(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from graph_builders import attacked_graph, fast_config, two_role_graph, two_role_records
from app.models.detector_config import FeatureScope
from app.models.errors import FormatError
from app.services.graph_store import GraphStore
from app.services.multi_model import multi_model_engine
from app.services.streaming_detector import StreamingDetector, replay_graph


# ユニットは4エッジなので SS=40 でウィンドウ境界がユニット境界に揃う
STREAM = {"SS": 40, "T": 30, "T_hat": 2}


@pytest.fixture(scope="module")
def ensemble():
    trained, _ = multi_model_engine.train_on_graph_sequence([two_role_graph(40, 5, prefix="train")], fast_config())
    return trained


def attack_lines(n_inject: int = 4, n_tail: int = 13):
    """92 本の良性エッジ + 注入 + 良性の後続ユニット (既定で 160 本、注入は3番目のウィンドウ t=119)"""
    graph, injected = attacked_graph(n_inject=n_inject, n_a=20, n_b=3, prefix="live", n_tail=n_tail)
    return [r.to_line() for r in graph.iter_records()], injected


# ===== リプレイ =====

def test_benign_replay_raises_no_alert(ensemble):
    summary = replay_graph(ensemble, two_role_records(20, 3, prefix="ok"), fast_config(**STREAM))
    assert summary.flushes == 3
    assert summary.edges == 92
    assert summary.confirmed == 0
    assert not summary.alert_raised


def test_injected_nodes_are_confirmed_after_waiting_time(ensemble):
    lines, injected = attack_lines()
    confirmed = []
    detector = StreamingDetector(ensemble, fast_config(**STREAM), on_confirm=confirmed.append)
    summary = detector.run(lines)
    assert summary.edges == 160
    assert set(injected) <= set(summary.confirmed_nodes)
    assert [r.node_id for r in confirmed] == summary.confirmed_nodes
    assert summary.alert_raised
    assert summary.summary_line() == f"flushes=4 confirmed={summary.confirmed} alert_raised=true"
    record = next(r for r in confirmed if r.node_id == injected[0])
    assert (record.node_type, record.best_class) == ("file", "process")
    # t=119 で検知され、次のスナップショット t=159 で 40 > T=30 となり確定する
    assert record.timestamp == 159
    assert summary.alert_time == 159


def test_end_of_stream_keeps_nodes_younger_than_waiting_time(ensemble):
    lines, injected = attack_lines()
    detector = StreamingDetector(ensemble, fast_config(SS=40, T=45, T_hat=2))
    summary = detector.run(lines)
    # 終端 t=159 で待機 40 ≤ T=45 のノードは確定せずキューに残る
    assert not set(injected) & set(summary.confirmed_nodes)
    assert set(injected) <= set(detector.state.queue)
    assert not summary.alert_raised


def test_infinite_wait_confirms_nothing(ensemble):
    lines, injected = attack_lines()
    detector = StreamingDetector(ensemble, fast_config(SS=40, T=1e18, T_hat=2))
    summary = detector.run(lines)
    assert summary.confirmed == 0
    assert not summary.alert_raised
    assert set(injected) <= set(detector.state.queue)


def test_zero_wait_needs_a_later_snapshot(ensemble):
    lines, injected = attack_lines(n_tail=0)
    config = fast_config(SS=40, T=0, T_hat=2)
    confirmed = []
    summary = StreamingDetector(ensemble, config, on_confirm=confirmed.append).run(lines)
    # 注入は最後のウィンドウ → 終端時刻までに T=0 を超えないので確定しない
    assert not set(injected) & set(summary.confirmed_nodes)
    assert summary.confirmed == len(confirmed)


def test_empty_stream(ensemble):
    summary = StreamingDetector(ensemble, fast_config(**STREAM)).run([])
    assert (summary.flushes, summary.edges, summary.confirmed) == (0, 0, 0)
    assert not summary.alert_raised
    assert summary.edges_per_second == 0.0


def test_blank_lines_are_skipped(ensemble):
    lines, _ = attack_lines(0)
    summary = StreamingDetector(ensemble, fast_config(**STREAM)).run(["", *lines, "   "])
    assert summary.edges == len(lines)


def test_malformed_line_aborts_with_line_number(ensemble):
    with pytest.raises(FormatError) as info:
        StreamingDetector(ensemble, fast_config(**STREAM)).run(["a\tprocess\tb\tfile\twrite\t0", "broken"])
    assert info.value.line_no == 2


def test_history_scope_matches_on_aligned_windows(ensemble):
    lines, injected = attack_lines()
    config = fast_config(feature_scope=FeatureScope.HISTORY, **STREAM)
    summary = StreamingDetector(ensemble, config).run(lines)
    assert set(injected) <= set(summary.confirmed_nodes)


def test_persistent_store(ensemble, tmp_path):
    lines, injected = attack_lines()
    config = fast_config(**STREAM)
    with GraphStore.open(str(tmp_path), config) as store:
        summary = StreamingDetector(ensemble, config, store=store).run(lines)
    assert set(injected) <= set(summary.confirmed_nodes)
    assert (tmp_path / "edges.log").read_text(encoding="utf-8").count("\n") == len(lines)


# ===== 非同期パイプライン =====

@pytest.mark.asyncio
async def test_async_pipeline_matches_sync(ensemble):
    lines, _ = attack_lines()
    sync = StreamingDetector(ensemble, fast_config(**STREAM)).run(lines)
    pipelined = await StreamingDetector(ensemble, fast_config(**STREAM)).run_async(lines)
    assert pipelined.flushes == sync.flushes
    assert sorted(pipelined.confirmed_nodes) == sorted(sync.confirmed_nodes)
    assert pipelined.alert_raised == sync.alert_raised


@pytest.mark.asyncio
async def test_async_pipeline_propagates_errors(ensemble):
    with pytest.raises(FormatError):
        await StreamingDetector(ensemble, fast_config(**STREAM)).run_async(["oops"])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
