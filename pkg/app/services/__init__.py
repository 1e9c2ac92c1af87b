"""
ProvGuard Services
"""

from .graph_store import GraphStore, ExecutionWindow
from .feature_extractor import FeatureExtractor, IncrementalFeatureCounter, feature_extractor
from .graphsage import GraphSAGEEngine, graphsage_engine
from .multi_model import MultiModelEngine, multi_model_engine
from .alert_tracer import AlertTracer, alert_tracer
from .streaming_detector import StreamingDetector, DetectionSummary, replay_graph
from .evasion_attack import EvasionAttackEngine, AttackKind, evasion_engine
from .evaluation_harness import EvaluationHarness, metrics, evaluation_harness

__all__ = [
    "GraphStore",
    "ExecutionWindow",
    "FeatureExtractor",
    "IncrementalFeatureCounter",
    "feature_extractor",
    "GraphSAGEEngine",
    "graphsage_engine",
    "MultiModelEngine",
    "multi_model_engine",
    "AlertTracer",
    "alert_tracer",
    "StreamingDetector",
    "DetectionSummary",
    "replay_graph",
    "EvasionAttackEngine",
    "AttackKind",
    "evasion_engine",
    "EvaluationHarness",
    "metrics",
    "evaluation_harness"
]
