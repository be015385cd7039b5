# src/qpbench/journal.py
"""
Append-only JSONL journal of an assessment.

Line types: header, task, result, conflict, decision, digest. Every line is
one canonical JSON object (sorted keys) so identical runs write identical
bytes.
"""
import json
import logging
import os
from typing import Any, Dict, List

from .errors import JournalError
from .utils.constants import JOURNAL_SCHEMA_VERSION

logger = logging.getLogger(__name__)

ENTRY_TYPES = ("header", "task", "result", "conflict", "decision", "digest")


def encode_entry(entry: Dict[str, Any]) -> str:
    return json.dumps(entry, sort_keys=True, separators=(",", ":"))


class JournalWriter:
    """Single writer; each entry is flushed before `write` returns."""

    def __init__(self, path: str, append: bool = False):
        self.path = path
        directory = os.path.dirname(os.path.abspath(path))
        try:
            os.makedirs(directory, exist_ok=True)
            self._file = open(path, "a" if append else "w", encoding="utf-8")
        except OSError as e:
            raise JournalError(f"Cannot open journal '{path}' for writing: {e}") from e
        self.entries_written = 0

    def write(self, entry: Dict[str, Any]) -> None:
        if entry.get("type") not in ENTRY_TYPES:
            raise JournalError(f"Refusing to write journal entry of unknown type {entry.get('type')!r}")
        self._file.write(encode_entry(entry) + "\n")
        self._file.flush()
        self.entries_written += 1

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "JournalWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_journal(path: str) -> List[Dict[str, Any]]:
    """
    Parses every line of a journal. A line that is not a complete JSON object
    (for example a write cut short by a crash) raises JournalError naming the
    last valid entry.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().split("\n")
    except OSError as e:
        raise JournalError(f"Journal '{path}' is unreadable: {e}") from e
    if lines and lines[-1] == "":
        lines.pop()

    entries: List[Dict[str, Any]] = []
    for number, line in enumerate(lines, start=1):
        try:
            entry = json.loads(line)
            if not isinstance(entry, dict) or entry.get("type") not in ENTRY_TYPES:
                raise ValueError("not a journal entry")
        except ValueError:
            if entries:
                last = f"line {number - 1} ({entries[-1]['type']})"
            else:
                last = "none"
            raise JournalError(f"Journal '{path}' is corrupt at line {number}; last valid entry: {last}") from None
        entries.append(entry)

    if entries:
        header = entries[0]
        if header["type"] != "header":
            raise JournalError(f"Journal '{path}' does not start with a header entry")
        version = header.get("schema_version")
        if version != JOURNAL_SCHEMA_VERSION:
            raise JournalError(f"Journal '{path}' has schema version {version}; "
                               f"this release reads version {JOURNAL_SCHEMA_VERSION}")
    logger.debug(f"Read {len(entries)} journal entries from {path}")
    return entries
