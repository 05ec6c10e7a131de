"""Canonical on-disk document handling.

All toolkit artifacts are UTF-8 JSON documents written in one canonical
form: sorted keys, two-space indent, no trailing whitespace, terminating
newline. Writing the same in-memory object twice yields identical bytes,
which is what the round-trip and determinism guarantees lean on.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

import numpy as np

from .errors import SchemaError


def canonical_json(obj: Any) -> str:
    """Serialize to the canonical text form (stable across runs)."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file + rename so readers never see partial content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path: str | Path, obj: Any) -> None:
    atomic_write_text(path, canonical_json(obj))


def read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def sha256_of_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_of_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def format_f32(value: float) -> str:
    """Shortest decimal that round-trips binary32 (at most 9 significant digits)."""
    return np.format_float_positional(np.float32(value), unique=True, trim="-")


def format_f64(value: float) -> str:
    """Shortest decimal that round-trips binary64 (repr semantics)."""
    return repr(float(value))


def format_sig9(value: float) -> str:
    """9-significant-digit decimal used in report tables."""
    return np.format_float_positional(
        np.float64(value), precision=9, unique=False, fractional=False, trim="-"
    )
