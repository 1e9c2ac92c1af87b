"""
ProvGuard Models
"""

from .provenance_graph import (
    EdgeRecord,
    ProvenanceGraph,
    Subgraph,
    LabeledGraph
)
from .feature_types import TypeMaps, NodeFeature, FeatureTable
from .role_model import (
    Submodel,
    Ensemble,
    TrainingReport,
    DetectionResult,
    NodeDiagnostics
)
from .alert_state import AlertState, AlertRecord, TracedSubgraph
from .confusion import ConfusionCounts
from .detector_config import (
    DetectorConfig,
    SSSemantics,
    FeatureScope,
    UnknownTypePolicy,
    load_config
)
from .errors import ProvGuardError

__all__ = [
    "EdgeRecord",
    "ProvenanceGraph",
    "Subgraph",
    "LabeledGraph",
    "TypeMaps",
    "NodeFeature",
    "FeatureTable",
    "Submodel",
    "Ensemble",
    "TrainingReport",
    "DetectionResult",
    "NodeDiagnostics",
    "AlertState",
    "AlertRecord",
    "TracedSubgraph",
    "ConfusionCounts",
    "DetectorConfig",
    "SSSemantics",
    "FeatureScope",
    "UnknownTypePolicy",
    "load_config",
    "ProvGuardError"
]
