"""Aggregate reports, span tables and on-disk persistence of results.

Counts are per transaction: a transaction holding several behaviors of one
kind adds one to that kind. Instance counts are kept under ``instances``.

CSV column orders:
  report_distribution.csv  provider, txCount, uniqueBorrowers
  report_behaviors.csv     category, kind, transactions, instances
  span_<tx>.csv            behavior, intStart, intEnd
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from . import __version__
from .model import TransactionBundle
from .pipeline import Results
from .records import (
    ADVANCED_KINDS, PRIMITIVE_KINDS, SWAP_KINDS, AdvancedBehavior, FlashLoanRecord, PrimitiveBehavior,
)
from .registry import PatternRegistry

RESULT_FILES = {"flashloans": "flashloans.jsonl", "primitives": "primitives.jsonl",
                "advanced": "advanced.jsonl"}
MANIFEST = "manifest.json"
SWAPPING = {"CollateralSwap": "collateral", "LoanSwap": "loan", "PlatformSwap": "platform"}


class StaleResultsError(ValueError):
    """Stored results were produced under a different registry."""


# -- distribution ------------------------------------------------------------------

@dataclass
class DistributionReport:
    per_provider: dict[str, dict[str, int]] = field(default_factory=dict)
    totals: dict[str, int] = field(default_factory=lambda: {"txCount": 0, "uniqueBorrowers": 0})
    top_borrowers: list[tuple[str, int]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "perProvider": {k: dict(v) for k, v in sorted(self.per_provider.items())},
            "totals": dict(self.totals),
            "topBorrowers": [[a, n] for a, n in self.top_borrowers],
        }

    def csv_rows(self) -> list[list]:
        rows = [["provider", "txCount", "uniqueBorrowers"]]
        for name, v in sorted(self.per_provider.items()):
            rows.append([name, v["txCount"], v["uniqueBorrowers"]])
        rows.append(["TOTAL", self.totals["txCount"], self.totals["uniqueBorrowers"]])
        return rows


def distribution(records: Iterable[FlashLoanRecord], top: int = 10) -> DistributionReport:
    txs: dict[str, set] = {}
    borrowers: dict[str, set] = {}
    all_tx: set[str] = set()
    all_borrowers: set[str] = set()
    per_runner: dict[str, set] = {}
    for r in records:
        txs.setdefault(r.provider, set()).add(r.tx_hash)
        borrowers.setdefault(r.provider, set()).add(r.runner)
        all_tx.add(r.tx_hash)
        all_borrowers.add(r.runner)
        per_runner.setdefault(r.runner, set()).add(r.tx_hash)
    report = DistributionReport()
    for provider in txs:
        report.per_provider[provider] = {"txCount": len(txs[provider]),
                                         "uniqueBorrowers": len(borrowers[provider])}
    report.totals = {"txCount": len(all_tx), "uniqueBorrowers": len(all_borrowers)}
    ranked = sorted(((a, len(t)) for a, t in per_runner.items()), key=lambda x: (-x[1], x[0]))
    report.top_borrowers = ranked[:top]
    return report


# -- behaviors ---------------------------------------------------------------------------

@dataclass
class BehaviorReport:
    primitive_counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(PRIMITIVE_KINDS, 0))
    advanced_counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(ADVANCED_KINDS, 0))
    swapping_breakdown: dict[str, int] = field(
        default_factory=lambda: dict.fromkeys(SWAPPING.values(), 0))
    totals: dict[str, int] = field(default_factory=lambda: {"primitiveTransactions": 0,
                                                            "advancedTransactions": 0})
    instances: dict[str, dict[str, int]] = field(default_factory=lambda: {
        "primitive": dict.fromkeys(PRIMITIVE_KINDS, 0), "advanced": dict.fromkeys(ADVANCED_KINDS, 0)})

    @property
    def swapping_total(self) -> int:
        return sum(self.swapping_breakdown.values())

    def to_json(self) -> dict:
        return {
            "primitiveCounts": dict(self.primitive_counts),
            "advancedCounts": {**self.advanced_counts, "Swapping": self.swapping_total},
            "swappingBreakdown": dict(self.swapping_breakdown),
            "totals": dict(self.totals),
            "instances": {k: dict(v) for k, v in self.instances.items()},
        }

    def csv_rows(self) -> list[list]:
        rows = [["category", "kind", "transactions", "instances"]]
        for kind in PRIMITIVE_KINDS:
            rows.append(["primitive", kind, self.primitive_counts[kind], self.instances["primitive"][kind]])
        for kind in ADVANCED_KINDS:
            rows.append(["advanced", kind, self.advanced_counts[kind], self.instances["advanced"][kind]])
        rows.append(["advanced", "Swapping", self.swapping_total,
                     sum(self.instances["advanced"][k] for k in SWAP_KINDS)])
        rows.append(["total", "primitive", self.totals["primitiveTransactions"], ""])
        rows.append(["total", "advanced", self.totals["advancedTransactions"], ""])
        return rows


def behavior_summary(primitives: Iterable[PrimitiveBehavior],
                     advanced: Iterable[AdvancedBehavior]) -> BehaviorReport:
    report = BehaviorReport()
    prim_tx: dict[str, set] = {k: set() for k in PRIMITIVE_KINDS}
    adv_tx: dict[str, set] = {k: set() for k in ADVANCED_KINDS}
    any_prim, any_adv = set(), set()
    for p in primitives:
        prim_tx[p.kind].add(p.tx_hash)
        any_prim.add(p.tx_hash)
        report.instances["primitive"][p.kind] += 1
    for a in advanced:
        adv_tx[a.kind].add(a.tx_hash)
        any_adv.add(a.tx_hash)
        report.instances["advanced"][a.kind] += 1
    report.primitive_counts = {k: len(v) for k, v in prim_tx.items()}
    report.advanced_counts = {k: len(v) for k, v in adv_tx.items()}
    report.swapping_breakdown = {SWAPPING[k]: len(adv_tx[k]) for k in SWAP_KINDS}
    report.totals = {"primitiveTransactions": len(any_prim), "advancedTransactions": len(any_adv)}
    return report


# -- span tables --------------------------------------------------------------------------

DISPLAY = {"UniswapV1": "Uniswap", "UniswapV2": "Uniswap V2", "CurveFi": "Curve", "OneInch": "1inch"}
BEHAVIOR = {"Exchange": "Swapping", "MarginTrade": "Margin Trading", "Liquidation": "Liquidation"}
LB_SINGLE = {"Deposit": "Depositing", "Redeem": "Redeeming", "Borrow": "Borrowing", "Repay": "Repaying"}
ORDINALS = ("First", "Second", "Third", "Fourth", "Fifth", "Sixth", "Seventh", "Eighth", "Ninth", "Tenth")


@dataclass(frozen=True)
class SpanTable:
    tx_hash: str
    rows: tuple[tuple[str, int, int], ...]

    def to_json(self) -> dict:
        return {"txHash": self.tx_hash,
                "rows": [{"behavior": b, "intStart": s, "intEnd": e} for b, s, e in self.rows]}

    def csv_rows(self) -> list[list]:
        return [["behavior", "intStart", "intEnd"], *[list(r) for r in self.rows]]


def _display(platform: str) -> str:
    return DISPLAY.get(platform, platform)


def _lb_label(actions: set[str]) -> str:
    if actions == {"Deposit", "Borrow"}:
        return "Collateral Borrowing"
    if len(actions) == 1:
        return LB_SINGLE[next(iter(actions))]
    return "Lending & Borrowing"


def span_table(bundle: TransactionBundle | str, loans: Iterable[FlashLoanRecord],
               primitives: Iterable[PrimitiveBehavior]) -> SpanTable:
    """One row per loan and per primitive, in execution order.

    Consecutive lending actions by one runner on one platform collapse into
    one row; a deposit followed by a borrow reads as collateral borrowing.
    """
    tx = bundle if isinstance(bundle, str) else bundle.tx_hash
    entries: list[tuple[int, int, int, str, str]] = []  # start, rank, end, behavior, platform
    for l in loans:
        if l.tx_hash == tx:
            entries.append((l.span.start, 0, l.span.end, "Flash Loan", l.provider))
    prims = sorted((p for p in primitives if p.tx_hash == tx), key=PrimitiveBehavior.sort_key)
    group: list[PrimitiveBehavior] = []

    def flush():
        if group:
            entries.append((min(p.span.start for p in group), 1, max(p.span.end for p in group),
                            _lb_label({p.action for p in group}), group[0].platform))
            group.clear()

    for p in prims:
        if p.kind == "LendingBorrowing":
            if group and (group[-1].platform, group[-1].runner) != (p.platform, p.runner):
                flush()
            group.append(p)
            continue
        flush()
        entries.append((p.span.start, 1, p.span.end, BEHAVIOR[p.kind], p.platform))
    flush()
    entries.sort()
    seen: dict[tuple[str, str], int] = {}
    for _, _, _, behavior, platform in entries:
        key = (behavior, _display(platform))
        seen[key] = seen.get(key, 0) + 1
    counter: dict[tuple[str, str], int] = {}
    rows = []
    for start, _, end, behavior, platform in entries:
        key = (behavior, _display(platform))
        label = f"{behavior} in {key[1]}"
        if seen[key] > 1:
            counter[key] = counter.get(key, 0) + 1
            n = counter[key]
            label = f"{ORDINALS[n - 1] if n <= len(ORDINALS) else f'#{n}'} {label}"
        rows.append((label, start, end))
    return SpanTable(tx, tuple(rows))


# -- persistence -----------------------------------------------------------------------------

def _jsonl(path: Path, items, mode: str) -> None:
    with open(path, mode, encoding="utf-8", newline="\n") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json()) + "\n")


def persist(results, path, registry: PatternRegistry, corpus_id: str = "", mode: str = "append",
            created_at: str | None = None) -> Path:
    """Write result JSONL files plus ``manifest.json`` under ``path``.

    ``mode='append'`` adds to existing files (load removes duplicates) and
    refuses to mix results produced under another registry.
    """
    if mode not in ("append", "overwrite"):
        raise ValueError("mode must be 'append' or 'overwrite'")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    checksum = registry.checksum()
    manifest_path = out / MANIFEST
    if mode == "append" and manifest_path.exists():
        old = json.loads(manifest_path.read_text(encoding="utf-8"))
        if old.get("registryChecksum") != checksum:
            raise StaleResultsError(f"{manifest_path}: results were produced with another registry")
    fmode = "a" if mode == "append" else "w"
    _jsonl(out / RESULT_FILES["flashloans"], results.flashloans, fmode)
    _jsonl(out / RESULT_FILES["primitives"], results.primitives, fmode)
    _jsonl(out / RESULT_FILES["advanced"], results.advanced, fmode)
    manifest = {
        "registryChecksum": checksum,
        "toolVersion": __version__,
        "corpusIdentity": corpus_id,
        "createdAt": created_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    tmp = manifest_path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, manifest_path)
    return out


def _read(path: Path, cls, key) -> list:
    if not path.exists():
        return []
    out, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                item = cls.from_json(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{n}: {exc}") from None
            k = key(item)
            if k not in seen:
                seen.add(k)
                out.append(item)
    return out


def _loan_key(r: FlashLoanRecord):
    return (r.tx_hash, r.provider, r.span.start, r.span.end)


def read_manifest(path) -> dict:
    manifest_path = Path(path) / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"no results at {path} (missing {MANIFEST})")
    return json.loads(manifest_path.read_text(encoding="utf-8"))


def load(path, registry: PatternRegistry | None = None):
    """Read persisted results, dropping duplicates; checks the registry checksum when given."""
    path = Path(path)
    manifest = read_manifest(path)
    if registry is not None and manifest.get("registryChecksum") != registry.checksum():
        raise StaleResultsError(f"{path}: results were produced with another registry")
    res = Results(
        _read(path / RESULT_FILES["flashloans"], FlashLoanRecord, _loan_key),
        _read(path / RESULT_FILES["primitives"], PrimitiveBehavior, PrimitiveBehavior.key),
        _read(path / RESULT_FILES["advanced"], AdvancedBehavior, AdvancedBehavior.key),
    )
    return res.sort()


# -- report files ---------------------------------------------------------------------------

def _write_csv(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def write_reports(out, dist: DistributionReport, behaviors: BehaviorReport) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report_distribution.json", dist.to_json())
    _write_csv(out / "report_distribution.csv", dist.csv_rows())
    _write_json(out / "report_behaviors.json", behaviors.to_json())
    _write_csv(out / "report_behaviors.csv", behaviors.csv_rows())
    return [out / n for n in ("report_distribution.json", "report_distribution.csv",
                              "report_behaviors.json", "report_behaviors.csv")]


def write_span_table(out, table: SpanTable) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    base = out / f"span_{table.tx_hash}"
    _write_json(base.with_suffix(".json"), table.to_json())
    _write_csv(base.with_suffix(".csv"), table.csv_rows())
    return [base.with_suffix(".json"), base.with_suffix(".csv")]


__all__ = [
    "BehaviorReport", "DistributionReport", "SpanTable", "StaleResultsError", "behavior_summary",
    "distribution", "load", "persist", "read_manifest", "span_table", "write_reports", "write_span_table",
]
