"""
🛡️ 検知器設定
パラメータ (BS, SS, R, T, T̂ ...) の既定値・検証・優先順位付き読み込み

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Any, Dict, List, Mapping, Optional
from enum import Enum
import os

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.models.errors import ConfigError


ENV_PREFIX = "PROVGUARD_"


class SSSemantics(Enum):
    EDGES = "edges"                # 新着エッジ数が SS に達したら検知
    ACTIVE_NODES = "active_nodes"  # active ノード数が SS に達したら検知


class FeatureScope(Enum):
    SUBGRAPH = "subgraph"  # サブグラフ内エッジのみで数える
    HISTORY = "history"    # ディスク上の全履歴で数える


class UnknownTypePolicy(Enum):
    FLAG = "flag"      # 未知型ノードは異常扱い
    ERROR = "error"    # UnknownType を送出
    IGNORE = "ignore"  # 未知型エッジは数えず、未知型ノードは検知対象外


class DetectorConfig(BaseModel):
    """検知器の全パラメータ (別名は短縮表記 BS, SS, R, T, T_hat, K)"""

    model_config = ConfigDict(populate_by_name=True, frozen=True, use_enum_values=False)

    # モデル
    batch_size: int = Field(5000, alias="BS")
    hops: int = Field(2, alias="K")
    hidden_width: int = 32
    epoch: int = 60
    learning_rate: float = 0.01
    use_bias: bool = True

    # ストレージ・ストリーミング
    subgraph_size: int = Field(200000, alias="SS")
    split_size: int = 150000
    ss_semantics: SSSemantics = SSSemantics.EDGES
    feature_scope: FeatureScope = FeatureScope.SUBGRAPH
    unknown_type_policy: UnknownTypePolicy = UnknownTypePolicy.FLAG
    snapshot_queue_size: int = 2

    # マルチモデル
    ratio_threshold: float = Field(1.5, alias="R")
    stall_patience: int = 3
    raise_on_stall: bool = False

    # アラート
    waiting_time: float = Field(168, alias="T")
    tolerance: int = Field(2, alias="T_hat")
    whitelist: List[str] = Field(default_factory=list)

    # 回避攻撃
    attack_steps: int = 100
    exhaustive_search: bool = False      # 箱が小さいとき整数格子を全探索する
    exhaustive_limit: int = 100000
    peer_node_types: Dict[str, str] = Field(default_factory=dict)

    # 評価
    repetitions: int = 5
    seed: int = 0

    @field_validator("batch_size", "subgraph_size", "split_size", "hidden_width", "epoch",
                     "stall_patience", "attack_steps", "repetitions", "snapshot_queue_size")
    @classmethod
    def _positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be a positive integer")
        return value

    @field_validator("learning_rate")
    @classmethod
    def _positive_rate(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be positive")
        return value

    @field_validator("ratio_threshold")
    @classmethod
    def _ratio_at_least_one(cls, value: float) -> float:
        if value < 1:
            raise ValueError("R must be >= 1")
        return value

    @field_validator("hops")
    @classmethod
    def _supported_hops(cls, value: int) -> int:
        if value not in (1, 2):
            raise ValueError("K must be 1 or 2")
        return value

    @field_validator("waiting_time")
    @classmethod
    def _non_negative_wait(cls, value: float) -> float:
        if value < 0:
            raise ValueError("T must be >= 0")
        return value

    @field_validator("tolerance", "exhaustive_limit")
    @classmethod
    def _non_negative_int(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @field_validator("whitelist", mode="before")
    @classmethod
    def _split_whitelist(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("peer_node_types", mode="before")
    @classmethod
    def _split_peer_types(cls, value: Any) -> Any:
        # "read:file,write:file" 形式を許可
        if isinstance(value, str):
            pairs = [item.split(":", 1) for item in value.split(",") if item.strip()]
            return {k.strip(): v.strip() for k, v in pairs}
        return value

    def evolve(self, **changes: Any) -> "DetectorConfig":
        """変更を適用した新しい設定 (検証付き)"""
        return build_config(self.model_dump(), changes)

    def layer_widths(self, in_width: int, out_width: int) -> List[int]:
        return [in_width] + [self.hidden_width] * (self.hops - 1) + [out_width]


# ===== 読み込み =====

def _field_lookup() -> Dict[str, str]:
    """別名・フィールド名 (大文字小文字無視) → フィールド名"""
    lookup: Dict[str, str] = {}
    for name, info in DetectorConfig.model_fields.items():
        lookup[name.lower()] = name
        if info.alias:
            lookup[info.alias.lower()] = name
    return lookup


def normalize_keys(raw: Mapping[str, Any], strict: bool = True) -> Dict[str, Any]:
    """キーをフィールド名に正規化し、None 値を落とす"""
    lookup = _field_lookup()
    normalized: Dict[str, Any] = {}
    for key, value in raw.items():
        if value is None:
            continue
        name = lookup.get(key.strip().lower().replace("-", "_"))
        if name is None:
            if strict:
                raise ConfigError(f"unknown config key {key!r}")
            continue
        normalized[name] = value
    return normalized


def read_config_file(path: str) -> Dict[str, Any]:
    """KEY=VALUE 形式の設定ファイルを読む"""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    return normalize_keys(dotenv_values(path))


def read_environment(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """PROVGUARD_* 環境変数を読む (.env があれば先に読み込む)"""
    if environ is None:
        load_dotenv(override=False)
        environ = os.environ
    picked = {key[len(ENV_PREFIX):]: value for key, value in environ.items() if key.startswith(ENV_PREFIX)}
    return normalize_keys(picked, strict=False)


def build_config(*layers: Mapping[str, Any]) -> DetectorConfig:
    """後ろの層ほど優先して設定を合成する"""
    merged: Dict[str, Any] = {}
    for layer in layers:
        merged.update(normalize_keys(layer))
    try:
        return DetectorConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(
    flags: Optional[Mapping[str, Any]] = None,
    config_path: Optional[str] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> DetectorConfig:
    """優先順位: フラグ > 設定ファイル > 環境変数 > 既定値"""
    env_layer = read_environment(environ)
    file_layer = read_config_file(config_path) if config_path else {}
    return build_config(env_layer, file_layer, flags or {})


# 既定設定
default_config = DetectorConfig()
