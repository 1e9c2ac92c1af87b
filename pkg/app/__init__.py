"""
ProvGuard
"""

__version__ = "0.1.0"
__description__ = "Streaming provenance-graph intrusion detection with multi-model role learning"

from .models import (
    ProvenanceGraph,
    EdgeRecord,
    Ensemble,
    DetectorConfig,
    ProvGuardError
)

from .services import (
    GraphStore,
    StreamingDetector,
    multi_model_engine,
    alert_tracer,
    evaluation_harness
)

__all__ = [
    "ProvenanceGraph",
    "EdgeRecord",
    "Ensemble",
    "DetectorConfig",
    "ProvGuardError",
    "GraphStore",
    "StreamingDetector",
    "multi_model_engine",
    "alert_tracer",
    "evaluation_harness"
]
