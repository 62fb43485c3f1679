"""Shared helpers for the versioned on-disk record formats.

All formats start with a `EVOMAIL-<KIND> v<N>` header line; files are
written atomically (temp file + rename) so readers never see partial
output. JSON is used for structured lines: Python round-trips finite
floats through repr exactly, which gives bit-exact persistence.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CorruptFile, VersionMismatch


def format_header(kind: str, version: int = 1) -> str:
    return f"EVOMAIL-{kind} v{version}"


def check_header(line: str, kind: str, version: int = 1) -> None:
    expected = format_header(kind, version)
    got = line.rstrip("\n")
    if not got.startswith(f"EVOMAIL-{kind} "):
        raise CorruptFile(f"bad header {got!r}, expected {expected!r}", 0)
    if got != expected:
        raise VersionMismatch(f"unsupported version {got!r}, expected {expected!r}")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def json_line(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def parse_json_line(line: str, offset: int) -> Any:
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"bad record: {exc}", offset) from exc


def array_to_b64(arr: np.ndarray) -> str:
    """Little-endian float64 bytes, base64-wrapped: endian-fixed and bit-exact."""
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def b64_to_array(text: str, shape: tuple[int, ...], offset: int = 0) -> np.ndarray:
    try:
        buf = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise CorruptFile(f"bad tensor payload: {exc}", offset) from exc
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(buf) != expected:
        raise CorruptFile(
            f"tensor payload length {len(buf)} != expected {expected}", offset)
    arr = np.frombuffer(buf, dtype="<f8").astype(np.float64)
    return arr.reshape(shape)


def read_lines(path: str | Path, kind: str, version: int = 1) -> list[str]:
    """Read a line-oriented versioned file, validating the header."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptFile(f"not utf-8: {exc}", 0) from exc
    lines = text.split("\n")
    if not lines or not lines[0]:
        raise CorruptFile("empty file", 0)
    check_header(lines[0], kind, version)
    return [ln for ln in lines[1:] if ln]
