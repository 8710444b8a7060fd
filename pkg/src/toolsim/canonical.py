"""Canonical JSON encoding shared by schema round-trips, fixture keys and result files."""

from __future__ import annotations

import hashlib
import json
from typing import Any


def dumps(value: Any) -> str:
    """Serialize with sorted keys and no insignificant whitespace."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(value: Any) -> str:
    text = value if isinstance(value, str) else dumps(value)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
