"""
🛡️ アラート状態
待機キュー Q、確定集合、しきい値 T / T̂、追跡サブグラフ

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Dict, List, Any, Optional, Set
from dataclasses import dataclass, field
import math


@dataclass
class AlertState:
    """ノード判定をシステムレベルのアラートへ変換する状態"""
    waiting_time: float = 168          # T
    tolerance: int = 2                 # T̂
    queue: Dict[str, float] = field(default_factory=dict)       # node_id → 初回検出時刻
    confirmed: Dict[str, float] = field(default_factory=dict)   # node_id → 確定時刻
    alert_raised: bool = False
    alert_time: Optional[float] = None
    whitelist: Set[str] = field(default_factory=set)
    last_time: float = -math.inf

    @property
    def confirmed_count(self) -> int:
        return len(self.confirmed)

    def summary(self) -> Dict[str, Any]:
        return {
            "queued": len(self.queue),
            "confirmed": len(self.confirmed),
            "alert_raised": self.alert_raised,
            "alert_time": self.alert_time,
        }


@dataclass
class AlertRecord:
    """アラートログ1行分"""
    timestamp: float
    node_id: str
    node_type: str
    best_class: str
    ratio: float

    def to_line(self) -> str:
        ratio = "inf" if math.isinf(self.ratio) else f"{self.ratio:.6g}"
        ts = int(self.timestamp) if float(self.timestamp).is_integer() else self.timestamp
        return f"{ts}\t{self.node_id}\t{self.node_type}\t{self.best_class}\t{ratio}"


@dataclass
class TracedSubgraph:
    """異常ノード周辺 (2-hop 祖先・子孫) の誘導サブグラフ"""
    center: str
    nodes: Dict[str, Dict[str, Any]] = field(default_factory=dict)   # node_id → {type, flagged, first_seen, last_seen}
    edges: List[Dict[str, Any]] = field(default_factory=list)        # {src, dst, type, timestamp}

    @property
    def members(self) -> Set[str]:
        return set(self.nodes)
