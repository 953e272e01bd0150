"""Structured, machine-readable diagnostics.

Detectors never raise on odd input; they record a diagnostic and move on.
Each entry is a flat dict so the CLI can print it as one JSON line.
"""

from __future__ import annotations

import json
import sys
from typing import TextIO


class Diagnostics(list):
    def emit(self, code: str, tx_hash: str | None = None, **fields) -> None:
        entry = {"code": code}
        if tx_hash is not None:
            entry["txHash"] = tx_hash
        entry.update(fields)
        self.append(entry)

    def codes(self) -> list[str]:
        return [d["code"] for d in self]


def write_jsonl(entries, stream: TextIO | None = None, dedup_disabled: bool = True) -> None:
    """Print diagnostics, collapsing repeated ``detector_disabled`` notices."""
    stream = stream or sys.stderr
    seen: set[str] = set()
    for entry in entries:
        if dedup_disabled and entry.get("code") == "detector_disabled":
            tag = entry.get("detector", "")
            if tag in seen:
                continue
            seen.add(tag)
            entry = {k: v for k, v in entry.items() if k != "txHash"}
        stream.write(json.dumps(entry, sort_keys=True) + "\n")
