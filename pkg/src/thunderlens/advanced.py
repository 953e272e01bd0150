"""Phase 3: derive advanced behaviors from primitives of one transaction."""

from __future__ import annotations

from typing import Iterable

from .diagnostics import Diagnostics
from .model import TransactionBundle
from .records import AdvancedBehavior, EvidenceRef, FlashLoanRecord, PrimitiveBehavior
from .registry import PatternRegistry


def _ordered(primitives: Iterable[PrimitiveBehavior]) -> list[PrimitiveBehavior]:
    return sorted(primitives, key=PrimitiveBehavior.sort_key)


def _meta(items) -> dict:
    first = next(iter(items), None)
    if first is None:
        return {"block_number": 0, "tx_index": 0}
    return {"block_number": first.block_number, "tx_index": first.tx_index}


def _debt_asset(b: PrimitiveBehavior) -> str | None:
    """Asset an action puts in or takes out of the platform."""
    return b.asset_in if b.action in ("Deposit", "Repay") else b.asset_out


def detect_arbitrage(primitives: Iterable[PrimitiveBehavior]) -> list[AdvancedBehavior]:
    groups: dict[tuple[str, str], list[PrimitiveBehavior]] = {}
    for b in _ordered(primitives):
        if b.kind == "Exchange":
            groups.setdefault((b.tx_hash, b.runner), []).append(b)
    out = []
    for (tx, runner), trades in sorted(groups.items()):
        if len(trades) < 2:
            continue
        out.append(AdvancedBehavior(
            kind="Arbitrage", runner=runner, evidence=tuple(t.ref() for t in trades), tx_hash=tx,
            details=(("runner", runner), ("trades", len(trades))), **_meta(trades),
        ))
    return out


def detect_anti_liquidation(bundle: TransactionBundle, registry: PatternRegistry,
                            diagnostics: Diagnostics | None = None) -> list[AdvancedBehavior]:
    diag = diagnostics if diagnostics is not None else Diagnostics()
    patterns = [p for p in registry.by_category("AntiLiquidation") if p.matcher_kind == "event_topic"]
    active = [p for p in patterns if p.active and p.event_hash is not None]
    if not active:
        diag.emit("detector_disabled", bundle.tx_hash, detector="AntiLiquidation",
                  reason="no configured anti-liquidation event")
        return []
    out = []
    for pattern in active:
        allowed = registry.constraint(pattern.emitter)
        if allowed is not None and not allowed:
            diag.emit("detector_disabled", bundle.tx_hash, detector="AntiLiquidation",
                      reason="empty emitter set")
            continue
        for log in bundle.logs:
            if log.topic0 != pattern.event_hash:
                continue
            if allowed is not None and log.emitter not in allowed:
                continue
            frame = bundle.emitting_frame(log)
            out.append(AdvancedBehavior(
                kind="AntiLiquidation", runner=bundle.calls[frame].caller,
                evidence=(EvidenceRef("Event", None, log.log_index),), tx_hash=bundle.tx_hash,
                details=(("emitter", log.emitter), ("logIndex", log.log_index)),
                block_number=bundle.block_number, tx_index=bundle.tx_index,
            ))
    return out


def _lending(primitives, action: str) -> list[PrimitiveBehavior]:
    return [b for b in _ordered(primitives) if b.kind == "LendingBorrowing" and b.action == action]


def detect_collateral_swap(bundle, primitives, loans, registry,
                           diagnostics: Diagnostics | None = None) -> list[AdvancedBehavior]:
    diag = diagnostics if diagnostics is not None else Diagnostics()
    redeems, deposits = _lending(primitives, "Redeem"), _lending(primitives, "Deposit")
    out, seen = [], set()
    for r in redeems:
        for d in deposits:
            if r.platform != d.platform:
                continue
            old, new = _debt_asset(r), _debt_asset(d)
            if old is None or new is None:
                diag.emit("extraction_failed", r.tx_hash, detector="CollateralSwap", parameter="asset")
                continue
            key = (r.platform, old, new)
            if old == new or key in seen:
                continue
            seen.add(key)
            out.append(AdvancedBehavior(
                kind="CollateralSwap", runner=d.runner, evidence=(r.ref(), d.ref()), tx_hash=r.tx_hash,
                details=(("platform", r.platform), ("oldCollateral", old), ("newCollateral", new)),
                **_meta([r]),
            ))
    return out


def detect_loan_swap(bundle, primitives, loans, registry, identity: str = "flashloan",
                     diagnostics: Diagnostics | None = None) -> list[AdvancedBehavior]:
    """Repay one debt and open another on the same platform.

    ``identity='flashloan'``: the repaid asset must be a flash-borrowed
    asset and differ from the new debt. ``identity='newloan'``: the repaid
    asset must equal the newly borrowed one.
    """
    if identity not in ("flashloan", "newloan"):
        raise ValueError("identity must be 'flashloan' or 'newloan'")
    repays, borrows = _lending(primitives, "Repay"), _lending(primitives, "Borrow")
    flash_assets = {l.asset_out for l in loans}
    out, seen = [], set()
    for r in repays:
        for b in borrows:
            if r.platform != b.platform:
                continue
            old, new = _debt_asset(r), _debt_asset(b)
            if old is None or new is None:
                continue
            if identity == "flashloan":
                if old == new or old not in flash_assets:
                    continue
            elif old != new:
                continue
            key = (r.platform, old, new)
            if key in seen:
                continue
            seen.add(key)
            details = [("platform", r.platform), ("oldDebtAsset", old), ("newDebtAsset", new)]
            if identity == "newloan":
                details.append(("identity", identity))
            out.append(AdvancedBehavior(
                kind="LoanSwap", runner=b.runner, evidence=(r.ref(), b.ref()), tx_hash=r.tx_hash,
                details=tuple(details), **_meta([r]),
            ))
    return out


def detect_platform_swap(bundle, primitives, loans, registry) -> list[AdvancedBehavior]:
    repays, redeems = _lending(primitives, "Repay"), _lending(primitives, "Redeem")
    deposits = _lending(primitives, "Deposit")
    out, seen = [], set()
    for a in sorted({r.platform for r in repays} & {r.platform for r in redeems}):
        repay = next(r for r in repays if r.platform == a)
        redeem = next(r for r in redeems if r.platform == a)
        for d in deposits:
            if d.platform == a or (a, d.platform) in seen:
                continue
            seen.add((a, d.platform))
            out.append(AdvancedBehavior(
                kind="PlatformSwap", runner=d.runner, evidence=(repay.ref(), redeem.ref(), d.ref()),
                tx_hash=d.tx_hash, details=(("platformA", a), ("platformB", d.platform)),
                **_meta([d]),
            ))
    return out


def classify_advanced(bundle: TransactionBundle, primitives: Iterable[PrimitiveBehavior],
                      loans: Iterable[FlashLoanRecord], registry: PatternRegistry,
                      loan_swap_identity: str = "flashloan",
                      diagnostics: Diagnostics | None = None) -> list[AdvancedBehavior]:
    diag = diagnostics if diagnostics is not None else Diagnostics()
    prims = [p for p in primitives if p.tx_hash == bundle.tx_hash]
    loans = [l for l in loans if l.tx_hash == bundle.tx_hash]
    out = detect_arbitrage(prims)
    out += detect_anti_liquidation(bundle, registry, diag)
    out += detect_collateral_swap(bundle, prims, loans, registry, diag)
    out += detect_loan_swap(bundle, prims, loans, registry, loan_swap_identity, diag)
    out += detect_platform_swap(bundle, prims, loans, registry)
    uniq = {b.key(): b for b in out}
    return sorted(uniq.values(), key=AdvancedBehavior.sort_key)
