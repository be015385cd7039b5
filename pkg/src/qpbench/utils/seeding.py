# src/qpbench/utils/seeding.py
import hashlib
import itertools
import json
from datetime import datetime, timedelta, timezone
from typing import Any, Callable

from .constants import LOGICAL_CLOCK_EPOCH


def derive_seed(base_seed: int, *labels: Any) -> int:
    """
    Derives a 63-bit child seed from a base seed and a sequence of labels.

    Labels are serialized canonically so the same (seed, labels) always yields
    the same child seed regardless of process or platform.
    """
    payload = json.dumps([int(base_seed), [_label(x) for x in labels]], separators=(",", ":"))
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") & ((1 << 63) - 1)


def _label(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [_label(v) for v in value]
    if hasattr(value, "value"):  # enums
        return value.value
    return value


def canonical_digest(document: Any) -> str:
    """SHA-256 over the canonical JSON form of a document."""
    text = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def logical_clock(start: str = LOGICAL_CLOCK_EPOCH, offset: int = 0) -> Callable[[], str]:
    """Returns a clock ticking one second per call from a fixed epoch, skipping `offset` ticks."""
    epoch = datetime.fromisoformat(start)
    counter = itertools.count(offset)
    return lambda: (epoch + timedelta(seconds=next(counter))).isoformat(timespec="seconds")


def make_clock(kind: str, offset: int = 0) -> Callable[[], str]:
    if kind == "logical":
        return logical_clock(offset=offset)
    return utc_now_iso
