"""
LPW1 tensor container.

Layout (all integers little-endian):
    b"LPW1"
    u32 header length
    header: UTF-8 JSON {"config": {...}, "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    raw tensor payloads, offsets relative to the end of the header
"""

import json
import logging
import os
from typing import Any, Dict, Tuple

import numpy as np

from ..config.constants import Constants
from ..utils.utils import WeightsFormatError

logger = logging.getLogger(__name__)

_SUPPORTED_DTYPES = {"<f8", "<f4", "<f2", "<i8", "<i4", "|u1", "|b1"}


def _little_endian(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    if array.dtype.byteorder == ">":
        array = array.astype(array.dtype.newbyteorder("<"))
    return array


def save_weights(path: str, tensors: Dict[str, np.ndarray], config: Dict[str, Any]) -> str:
    """Write tensors (in the given order) and a config record to path.

    Returns:
        The path written
    """
    entries = []
    payloads = []
    offset = 0
    for name, array in tensors.items():
        array = _little_endian(np.asarray(array))
        dtype = array.dtype.str
        if dtype not in _SUPPORTED_DTYPES:
            raise WeightsFormatError(f"{name}: unsupported dtype {dtype}")
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": list(array.shape),
            "offset": offset,
            "nbytes": int(array.nbytes),
        })
        payloads.append(array)
        offset += array.nbytes

    header = json.dumps({"config": config, "tensors": entries}, sort_keys=True).encode("utf-8")

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp_path = path + ".tmp"
    with open(tmp_path, "wb") as f:
        f.write(Constants.WEIGHTS_MAGIC)
        f.write(np.array([len(header)], dtype="<u4").tobytes())
        f.write(header)
        for array in payloads:
            f.write(array.tobytes())
    os.replace(tmp_path, path)
    logger.debug(f"Wrote {len(entries)} tensors to {path}")
    return path


def load_weights(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read an LPW1 file.

    Returns:
        (tensors in stored order, config record)
    """
    with open(path, "rb") as f:
        blob = f.read()

    magic = Constants.WEIGHTS_MAGIC
    if len(blob) < len(magic) + 4 or blob[:len(magic)] != magic:
        raise WeightsFormatError(f"{path} is not an LPW1 file")
    header_len = int(np.frombuffer(blob, dtype="<u4", count=1, offset=len(magic))[0])
    start = len(magic) + 4
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightsFormatError(f"{path}: unreadable header ({e})")

    base = start + header_len
    tensors = {}
    for entry in header.get("tensors", []):
        try:
            name = entry["name"]
            begin = base + entry["offset"]
            end = begin + entry["nbytes"]
            if end > len(blob) or entry["dtype"] not in _SUPPORTED_DTYPES:
                raise WeightsFormatError(f"{path}: tensor '{name}' is truncated or malformed")
            array = np.frombuffer(blob[begin:end], dtype=entry["dtype"]).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise WeightsFormatError(f"{path}: malformed tensor entry {entry!r} ({e})") from e
        tensors[name] = array.copy()
    return tensors, header.get("config", {})
