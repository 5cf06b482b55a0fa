"""Canonical JSON encoding used for every signed or hashed structure.

Rules (normative for the wire formats of this package):
  - object keys sorted lexicographically by Unicode code point
  - no insignificant whitespace, UTF-8 bytes
  - integers unquoted; floats are rejected outright
  - binary values appear as lowercase hex strings at the field level

Two structurally equal values always encode to identical bytes, so the
encoding is safe to sign and hash.
"""

from __future__ import annotations

import json
from typing import Any

from agentlineage.errors import EncodingError

_SCALARS = (str, int, bool, type(None))


def _check(value: Any, path: str) -> None:
    if isinstance(value, bool) or value is None or isinstance(value, (str, int)):
        return
    if isinstance(value, float):
        raise EncodingError(f"float at {path} is not canonically encodable")
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingError(f"non-string key {key!r} at {path}")
            _check(item, f"{path}.{key}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    raise EncodingError(f"unsupported type {type(value).__name__} at {path}")


def canonical_dumps(value: Any) -> str:
    """Serialize to the canonical JSON text form."""
    _check(value, "$")
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def canonical_bytes(value: Any) -> bytes:
    """Serialize to canonical UTF-8 bytes (the form that gets hashed/signed)."""
    return canonical_dumps(value).encode("utf-8")
