"""Small file and struct helpers used by the binary stores."""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import BinaryIO

from .errors import StoreError


def write_if_changed(path: str | Path, data: bytes) -> bool:
    """Atomically write ``data`` to ``path``; skip when the bytes already match.

    Returns True when the file was (re)written. The skip keeps re-runs from
    touching unchanged outputs.
    """
    path = Path(path)
    if path.exists() and path.read_bytes() == data:
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return True


def write_text_if_changed(path: str | Path, text: str) -> bool:
    return write_if_changed(path, text.encode("utf-8"))


def read_exact(handle: BinaryIO, count: int, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise StoreError(f"truncated store while reading {what}")
    return data


def pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for store record")
    return struct.pack("<H", len(raw)) + raw


def unpack_str(handle: BinaryIO, what: str = "string") -> str:
    (length,) = struct.unpack("<H", read_exact(handle, 2, what))
    return read_exact(handle, length, what).decode("utf-8")
