"""Canonical JSON reports with input digests and an isolated metadata block."""

from __future__ import annotations

import hashlib
import json
import math
import platform
from datetime import datetime, timezone
from typing import Any

import numpy as np


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def digest(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def metadata() -> dict:
    from . import __version__

    return {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def make_report(check: str, inputs: Any, seed: int | None, verdict: str, numbers: Any) -> dict:
    """``{check, inputs_digest, seed, verdict, numbers}``; metadata is attached by :func:`dump_report`."""
    return {
        "check": check,
        "inputs_digest": digest(inputs),
        "seed": seed,
        "verdict": verdict,
        "numbers": to_jsonable(numbers),
    }


def strip_metadata(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k != "metadata"}


def dumps_report(doc: dict, with_metadata: bool = True) -> str:
    body = strip_metadata(doc)
    if with_metadata:
        body = dict(body, metadata=doc.get("metadata") or metadata())
    return json.dumps(to_jsonable(body), sort_keys=True, indent=2) + "\n"


def dump_report(doc: dict, path, with_metadata: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(doc, with_metadata))
