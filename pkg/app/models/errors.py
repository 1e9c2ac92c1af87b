"""
🛡️ ProvGuard 例外定義
来歴グラフ検知パイプライン全体で共有する例外階層

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Optional


class ProvGuardError(Exception):
    """ProvGuard の全例外の基底クラス"""


class ConfigError(ProvGuardError, ValueError):
    """設定値の検証エラー"""


class FormatError(ProvGuardError, ValueError):
    """入力レコードが解析できない"""

    def __init__(self, reason: str, line_no: Optional[int] = None, source: Optional[str] = None):
        self.reason = reason
        self.line_no = line_no
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line_no is not None:
            where += f"{line_no}: "
        elif where:
            where += " "
        super().__init__(f"{where}{reason}")


class TypeConflict(ProvGuardError, ValueError):
    """同一ノードが異なる型で再宣言された"""

    def __init__(self, node_id: str, known_type: str, new_type: str, line_no: Optional[int] = None):
        self.node_id = node_id
        self.known_type = known_type
        self.new_type = new_type
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(
            f"{prefix}node {node_id!r} declared as {known_type!r}, re-declared as {new_type!r}"
        )


class UnknownNode(ProvGuardError, KeyError):
    """存在しないノードへの問い合わせ"""

    def __init__(self, node_id: str):
        self.node_id = node_id
        super().__init__(f"unknown node {node_id!r}")

    def __str__(self) -> str:
        return self.args[0]


class UnknownType(ProvGuardError, KeyError):
    """凍結済み型マップに存在しない型"""

    def __init__(self, kind: str, value: str):
        self.kind = kind
        self.value = value
        super().__init__(f"unknown {kind} type {value!r}")

    def __str__(self) -> str:
        return self.args[0]


class ShapeMismatch(ProvGuardError, ValueError):
    """重み行列と特徴量の形状不一致"""


class Divergence(ProvGuardError, ArithmeticError):
    """学習中に損失が NaN/Inf になった"""


class StallDetected(ProvGuardError, RuntimeError):
    """アンサンブル学習で X が縮小しなくなった"""

    def __init__(self, stuck_nodes, patience: int):
        self.stuck_nodes = list(stuck_nodes)
        self.patience = patience
        super().__init__(
            f"{len(self.stuck_nodes)} nodes not learnable after {patience} consecutive submodels"
        )


class EmptyClass(ProvGuardError, ValueError):
    """該当クラスの良性サンプルが学習データに無い"""


class InfeasibleBudget(ProvGuardError, ValueError):
    """予算内に x 以外の整数点が存在しない"""


class NegativeCount(ProvGuardError, ValueError):
    """存在する以上のエッジを削除しようとした"""


class UndefinedMetric(ProvGuardError, ZeroDivisionError):
    """分母が 0 で評価指標が定義できない"""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"metric {name!r} is undefined (zero denominator)")


class InsufficientGraphs(ProvGuardError, ValueError):
    """分割戦略に必要なグラフ数が足りない"""
