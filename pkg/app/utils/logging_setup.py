"""
🛡️ ログ設定
標準エラー出力へのハンドラを1つだけ設置する

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Union
import logging
import sys


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Union[str, int] = "INFO") -> logging.Logger:
    """app パッケージのロガーを stderr に向ける (二重登録しない)"""
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ValueError("unknown log level")

    root = logging.getLogger("app")
    root.setLevel(level)
    if not any(getattr(h, "_provguard", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._provguard = True
        root.addHandler(handler)
    return root


def progress_disabled() -> bool:
    """INFO より上のレベルでは tqdm を出さない"""
    return not logging.getLogger("app").isEnabledFor(logging.INFO)
