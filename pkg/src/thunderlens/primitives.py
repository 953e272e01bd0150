"""Phase 2: match Exchange, LendingBorrowing, MarginTrade and Liquidation patterns.

An event match spans the emitting frame's subtree; a selector match spans
the called frame's subtree. Each behavior is tagged with the first flash
loan whose span contains it.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable

from .diagnostics import Diagnostics
from .model import ModelError, Span, TransactionBundle
from .params import Site, extract
from .records import FlashLoanRecord, PrimitiveBehavior
from .registry import PRIMITIVE_CATEGORIES, Pattern, PatternRegistry

_FIELDS = ("receiver", "asset_in", "asset_out", "amount_in")
_ALLOWED = {
    "Exchange": _FIELDS,
    "LendingBorrowing": _FIELDS,
    "MarginTrade": ("asset_in", "asset_out", "amount_in"),
    "Liquidation": ("receiver", "asset_out", "amount_in"),
}


def classify(bundle: TransactionBundle, flash_loans: Iterable[FlashLoanRecord],
             registry: PatternRegistry, diagnostics: Diagnostics | None = None) -> list[PrimitiveBehavior]:
    diag = diagnostics if diagnostics is not None else Diagnostics()
    if bundle.reverted:
        return []
    loans = sorted((l for l in flash_loans if l.tx_hash == bundle.tx_hash),
                   key=FlashLoanRecord.sort_key)
    out: list[PrimitiveBehavior] = []
    for pattern in registry.patterns:
        if pattern.category not in PRIMITIVE_CATEGORIES or pattern.role != "behavior":
            continue
        if not pattern.active:
            continue
        try:
            out.extend(_match(bundle, pattern, registry, diag))
        except Exception as exc:
            diag.emit("detector_error", bundle.tx_hash, detector=f"{pattern.platform}:{pattern.name}",
                      error=repr(exc))
    tagged = [_tag_loan(b, loans) for b in _dedupe(out)]
    tagged.sort(key=PrimitiveBehavior.sort_key)
    return tagged


def match_margin_trade(bundle: TransactionBundle, registry: PatternRegistry,
                       diagnostics: Diagnostics | None = None) -> list[PrimitiveBehavior]:
    diag = diagnostics if diagnostics is not None else Diagnostics()
    out = []
    for pattern in registry.by_category("MarginTrade"):
        if pattern.matcher_kind == "composite" and pattern.composite == "bzx_margin_trade":
            out.extend(_margin_trades(bundle, pattern, registry, diag))
    return sorted(_dedupe(out), key=PrimitiveBehavior.sort_key)


def _dedupe(items: list[PrimitiveBehavior]) -> list[PrimitiveBehavior]:
    seen = set()
    out = []
    for b in items:
        if b.key() not in seen:
            seen.add(b.key())
            out.append(b)
    return out


def _tag_loan(b: PrimitiveBehavior, loans: list[FlashLoanRecord]) -> PrimitiveBehavior:
    for loan in loans:
        if loan.span.contains(b.span):
            return replace(b, inside_loan=True, loan_ref=loan.ref())
    return b


def _match(bundle, pattern, registry, diag) -> list[PrimitiveBehavior]:
    kind = pattern.matcher_kind
    if kind == "composite":
        if pattern.composite == "bzx_margin_trade":
            return _margin_trades(bundle, pattern, registry, diag)
        return []
    sites = []
    if kind == "event_topic":
        allowed = registry.constraint(pattern.emitter)
        for log in bundle.logs:
            if log.topic0 == pattern.event_hash and (allowed is None or log.emitter in allowed):
                sites.append(Site(bundle, bundle.emitting_frame(log), log))
    elif kind == "function_selector":
        allowed = registry.constraint(pattern.callee)
        for call in bundle.calls:
            if call.selector == pattern.selector and (allowed is None or call.callee in allowed):
                sites.append(Site(bundle, call.index))
    out = []
    for site in sites:
        b = _build(bundle, pattern, site, registry, diag)
        if b is not None:
            out.append(b)
    return out


def _margin_trades(bundle, pattern, registry, diag) -> list[PrimitiveBehavior]:
    """Selector call plus the margin ``Mint`` event from the callee inside its subtree."""
    allowed = registry.constraint(pattern.callee)
    out = []
    for call in bundle.calls:
        if call.selector != pattern.selector:
            continue
        if allowed is not None and call.callee not in allowed:
            continue
        end = bundle.subtree_end(call.index)
        event = next(
            (log for log in bundle.logs
             if log.topic0 == pattern.event_hash and log.emitter == call.callee
             and call.index <= log.after_call_index <= end),
            None,
        )
        if event is None:
            continue
        b = _build(bundle, pattern, Site(bundle, call.index), registry, diag,
                   site_index=event.log_index)
        if b is not None:
            out.append(b)
    return out


def _lb_action(pattern: Pattern, values: dict) -> tuple[str | None, int | None]:
    """Normalized lending action and amount; MakerDAO ``frob`` reads the signs."""
    if pattern.action != "frob":
        return pattern.action, values.get("amount_in")
    dink, dart = values.get("dink"), values.get("dart")
    if dink is None or dart is None:
        return None, None
    if dink > 0:
        return "Deposit", dink
    if dink < 0:
        return "Redeem", -dink
    if dart > 0:
        return "Borrow", dart
    if dart < 0:
        return "Repay", -dart
    return None, None


def _build(bundle, pattern, site: Site, registry, diag, site_index=None) -> PrimitiveBehavior | None:
    values = extract(site, pattern.params, registry.address_book)
    action = None
    if pattern.category == "LendingBorrowing":
        action, amount = _lb_action(pattern, values)
        values["amount_in"] = amount
        if action is None:
            diag.emit("extraction_failed", bundle.tx_hash, detector=f"{pattern.platform}:{pattern.name}",
                      parameter="action", frame=site.frame)
            return None
    allowed = _ALLOWED[pattern.category]
    fields = {name: (values.get(name) if name in allowed else None) for name in _FIELDS}
    missing = [name for name in allowed if fields[name] is None]
    if missing:
        diag.emit("extraction_failed", bundle.tx_hash, detector=f"{pattern.platform}:{pattern.name}",
                  parameter=missing[0], frame=site.frame)
        return None
    call = bundle.calls[site.frame]
    provider = values.get("service_provider") or site.provider
    runner = values.get("runner") or call.caller
    try:
        return PrimitiveBehavior(
            kind=pattern.category, platform=pattern.platform, sub_action=pattern.name,
            action=action, service_provider=provider, runner=runner,
            block_number=bundle.block_number, tx_index=bundle.tx_index, tx_hash=bundle.tx_hash,
            span=Span(site.frame, site.end),
            site=site.log.log_index if site.log is not None else site_index,
            **fields,
        )
    except ModelError as exc:
        diag.emit("extraction_failed", bundle.tx_hash, detector=f"{pattern.platform}:{pattern.name}",
                  parameter=exc.path, frame=site.frame)
        return None
