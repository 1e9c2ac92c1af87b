"""
🛡️ モデル入出力
サブモデル / アンサンブルのバージョン付きバイナリコンテナ

レイアウト: magic(4) | version(u16) | header_len(u32) | header(JSON, キー昇順) | 配列 (float64 LE, 行優先)
時刻などの可変情報は含めないので、同じ重みからは同じバイト列が得られる。

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Any, Dict, List, Tuple
import json
import struct

import numpy as np

from app.models.errors import FormatError
from app.models.feature_types import TypeMaps
from app.models.role_model import ACTIVATIONS, Ensemble, Submodel


SUBMODEL_MAGIC = b"PGSM"
ENSEMBLE_MAGIC = b"PGEN"
FORMAT_VERSION = 1

_PREFIX = struct.Struct("<4sHI")
_LENGTH = struct.Struct("<Q")


def _pack(magic: bytes, header: Dict[str, Any], body: bytes) -> bytes:
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(magic, FORMAT_VERSION, len(header_bytes)) + header_bytes + body


def _unpack(blob: bytes, magic: bytes) -> Tuple[Dict[str, Any], memoryview]:
    if len(blob) < _PREFIX.size:
        raise FormatError("model container truncated")
    found, version, header_len = _PREFIX.unpack_from(blob, 0)
    if found != magic:
        raise FormatError(f"bad magic {found!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(bytes(blob[start:start + header_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt header: {e}") from e
    return header, memoryview(blob)[start + header_len:]


# ===== サブモデル =====

def submodel_to_bytes(submodel: Submodel) -> bytes:
    header = {
        "K": submodel.hops,
        "widths": submodel.widths,
        "activation": ACTIVATIONS[submodel.activation],
        "maps_fingerprint": submodel.maps_fingerprint,
    }
    arrays: List[np.ndarray] = []
    for weight, bias in zip(submodel.weights, submodel.biases):
        arrays.append(weight)
        arrays.append(bias)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return _pack(SUBMODEL_MAGIC, header, body)


def submodel_from_bytes(blob: bytes) -> Submodel:
    header, body = _unpack(blob, SUBMODEL_MAGIC)
    widths = header["widths"]
    names = {v: k for k, v in ACTIVATIONS.items()}
    if header["activation"] not in names:
        raise FormatError(f"unknown activation id {header['activation']}")

    weights: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    offset = 0
    for k in range(header["K"]):
        shapes = [(widths[k + 1], 2 * widths[k]), (widths[k + 1],)]
        for shape in shapes:
            count = int(np.prod(shape))
            end = offset + 8 * count
            if end > len(body):
                raise FormatError("model container truncated")
            array = np.frombuffer(body[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
            (weights if len(shape) == 2 else biases).append(array)
            offset = end
    if offset != len(body):
        raise FormatError("trailing bytes in submodel container")
    return Submodel(weights, biases, header["maps_fingerprint"], names[header["activation"]])


# ===== アンサンブル =====

def ensemble_to_bytes(ensemble: Ensemble) -> bytes:
    blobs = [submodel_to_bytes(m) for m in ensemble.submodels]
    header = {
        "maps": ensemble.maps.to_dict(),
        "R": ensemble.ratio_threshold,
        "cnt": ensemble.cnt,
    }
    body = b"".join(_LENGTH.pack(len(b)) + b for b in blobs)
    return _pack(ENSEMBLE_MAGIC, header, body)


def ensemble_from_bytes(blob: bytes) -> Ensemble:
    header, body = _unpack(blob, ENSEMBLE_MAGIC)
    maps = TypeMaps.from_dict(header["maps"])
    ensemble = Ensemble(maps, float(header["R"]))
    offset = 0
    for _ in range(header["cnt"]):
        if offset + _LENGTH.size > len(body):
            raise FormatError("ensemble container truncated")
        (size,) = _LENGTH.unpack_from(body, offset)
        offset += _LENGTH.size
        submodel = submodel_from_bytes(bytes(body[offset:offset + size]))
        if submodel.maps_fingerprint != maps.fingerprint():
            raise FormatError("submodel was trained under different type maps")
        ensemble.append(submodel)
        offset += size
    if offset != len(body):
        raise FormatError("trailing bytes in ensemble container")
    return ensemble


def save_ensemble(ensemble: Ensemble, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(ensemble_to_bytes(ensemble))


def load_ensemble(path: str) -> Ensemble:
    with open(path, "rb") as fh:
        return ensemble_from_bytes(fh.read())
