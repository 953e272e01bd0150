"""Phase 1: find flash loans and bracket each one with an internal-call span.

Every FlashLoan-category pattern in the registry is run against each
bundle. Event and selector patterns go through a generic engine; dYdX is an
ordered event chain; UniswapV2 flash swaps use a procedural detector.
"""

from __future__ import annotations

from typing import Iterable

from . import abi
from .diagnostics import Diagnostics
from .model import ModelError, Span, TransactionBundle
from .params import Site, extract
from .records import FlashLoanRecord
from .registry import Pattern, PatternRegistry

UNISWAP_V2_CALL = "0x10d1e85c"


class ExtractionError(ValueError):
    def __init__(self, parameter: str, message: str = ""):
        super().__init__(f"cannot extract {parameter}" + (f": {message}" if message else ""))
        self.parameter = parameter


def identify(corpus: Iterable[TransactionBundle], registry: PatternRegistry,
             strict: bool = True, diagnostics: Diagnostics | None = None) -> list[FlashLoanRecord]:
    out: list[FlashLoanRecord] = []
    for bundle in corpus:
        out.extend(identify_bundle(bundle, registry, strict, diagnostics))
    out.sort(key=FlashLoanRecord.sort_key)
    return out


def identify_bundle(bundle: TransactionBundle, registry: PatternRegistry,
                    strict: bool = True, diagnostics: Diagnostics | None = None) -> list[FlashLoanRecord]:
    return _run(bundle, registry, registry.by_category("FlashLoan"), strict, diagnostics)


def detect_aave(bundle, registry, strict=True, diagnostics=None):
    return _run(bundle, registry, _provider_patterns(registry, "Aave"), strict, diagnostics)


def detect_bzx(bundle, registry, strict=True, diagnostics=None):
    return _run(bundle, registry, _provider_patterns(registry, "bZx"), strict, diagnostics)


def detect_uniswapv2(bundle, registry, strict=True, diagnostics=None):
    return _run(bundle, registry, _provider_patterns(registry, "UniswapV2"), strict, diagnostics)


def detect_dydx(bundle, registry, strict=True, diagnostics=None):
    return _run(bundle, registry, _provider_patterns(registry, "dYdX"), strict, diagnostics)


def _provider_patterns(registry: PatternRegistry, platform: str) -> list[Pattern]:
    return [p for p in registry.by_category("FlashLoan") if p.platform == platform]


def _run(bundle, registry, patterns, strict, diagnostics) -> list[FlashLoanRecord]:
    diag = diagnostics if diagnostics is not None else Diagnostics()
    if bundle.reverted:
        return []
    out: list[FlashLoanRecord] = []
    for pattern in patterns:
        if not pattern.active:
            continue
        try:
            out.extend(_detect(bundle, pattern, registry, strict, diag))
        except Exception as exc:  # never let one bundle abort a batch
            diag.emit("detector_error", bundle.tx_hash, detector=_tag(pattern), error=repr(exc))
    out.sort(key=FlashLoanRecord.sort_key)
    return out


def _tag(pattern: Pattern) -> str:
    return f"{pattern.platform}:{pattern.name}"


def _constraint(pattern, refs, registry, strict):
    if pattern.strict_only and not strict:
        return None
    return registry.constraint(refs)


def _detect(bundle, pattern, registry, strict, diag) -> list[FlashLoanRecord]:
    kind = pattern.matcher_kind
    if kind == "composite":
        if pattern.composite == "uniswapv2_flash_swap":
            return _uniswapv2_flash_swaps(bundle, pattern, registry, diag)
        return []
    if kind == "ordered_event_chain":
        return _chains(bundle, pattern, registry, strict, diag)

    sites: list[Site] = []
    if kind == "event_topic":
        allowed = _constraint(pattern, pattern.emitter, registry, strict)
        if allowed is not None and not allowed:
            diag.emit("detector_disabled", bundle.tx_hash, detector=_tag(pattern),
                      reason="empty emitter set")
            return []
        for log in bundle.logs:
            if log.topic0 == pattern.event_hash and (allowed is None or log.emitter in allowed):
                sites.append(Site(bundle, bundle.emitting_frame(log), log))
    elif kind == "function_selector":
        allowed = _constraint(pattern, pattern.callee, registry, strict)
        if allowed is not None and not allowed:
            diag.emit("detector_disabled", bundle.tx_hash, detector=_tag(pattern),
                      reason="empty callee set")
            return []
        for call in bundle.calls:
            if call.selector == pattern.selector and (allowed is None or call.callee in allowed):
                sites.append(Site(bundle, call.index))

    out = []
    for site in sites:
        try:
            out.append(extract_info(bundle, pattern, site, registry, diag))
        except ExtractionError as exc:
            diag.emit("extraction_failed", bundle.tx_hash, detector=_tag(pattern),
                      parameter=exc.parameter, frame=site.frame)
    return out


def extract_info(bundle: TransactionBundle, pattern: Pattern, site: Site,
                 registry: PatternRegistry, diagnostics: Diagnostics | None = None,
                 span: Span | None = None) -> FlashLoanRecord:
    """Read the loan parameters at ``site`` and bracket the borrow/repay span.

    With no explicit ``span`` the disbursement is the first movement in the
    site's subtree that pays the recipient, and the repayment is the first
    later movement of the same asset back to the lender covering the amount.
    """
    book = registry.address_book
    values = extract(site, pattern.params, book)
    provider_addr = values.get("service_provider") or site.provider
    runner = values.get("runner") or bundle.calls[site.frame].caller
    recipient = values.get("recipient") or runner
    asset_out = values.get("asset_out")
    amount = values.get("amount_in")
    asset_in = values.get("asset_in")

    if span is None:
        root, last = site.frame, bundle.subtree_end(site.frame)
        bracket = _bracket(bundle, root, last, recipient, asset_out)
        if bracket is None:
            if diagnostics is not None:
                diagnostics.emit("span_unresolved", bundle.tx_hash, detector=_tag(pattern),
                                 frame=site.frame)
            span = Span(root, last)
        else:
            start, end, moved = bracket
            span = Span(start, end)
            asset_out = asset_out or moved.token
            amount = amount if amount is not None else moved.amount
            asset_in = asset_in or moved.token
    else:
        moved = _disbursement(bundle, span.start, span.end, recipient, asset_out)
        if moved is not None:
            asset_out = asset_out or moved.token
            amount = amount if amount is not None else moved.amount
    asset_in = asset_in or asset_out

    for name, value in (("service_provider", provider_addr), ("runner", runner),
                        ("asset_out", asset_out), ("amount_in", amount)):
        if value is None:
            raise ExtractionError(name)
    try:
        return FlashLoanRecord(
            provider=pattern.platform, service_provider=provider_addr, runner=runner,
            asset_in=asset_in, asset_out=asset_out, amount_in=amount,
            block_number=bundle.block_number, tx_index=bundle.tx_index,
            tx_hash=bundle.tx_hash, span=span,
        )
    except ModelError as exc:
        raise ExtractionError(exc.path, exc.message) from None


def _disbursement(bundle, lo, hi, recipient, asset):
    moves = bundle.movements()
    for i in range(lo, hi + 1):
        m = moves[i]
        if m is None or m.to != recipient or m.sender == recipient:
            continue
        if asset is not None and m.token != asset:
            continue
        return m
    return None


def _bracket(bundle, lo, hi, recipient, asset):
    moves = bundle.movements()
    for i in range(lo, hi + 1):
        m = moves[i]
        if m is None or m.to != recipient or m.sender == recipient:
            continue
        if asset is not None and m.token != asset:
            continue
        lender = m.sender
        for j in range(i + 1, hi + 1):
            r = moves[j]
            if r is not None and r.token == m.token and r.to == lender and r.amount >= m.amount:
                return i, j, m
        return None
    return None


# -- ordered event chains (dYdX) ---------------------------------------------

def match_chain(logs, steps) -> list[dict[str, int]]:
    """Greedy, non-overlapping subsequence matches of ``steps`` over ``logs``.

    Returns one ``{step name: position in logs}`` mapping per match.
    """
    hashes = [log.topic0 for log in logs]
    matches = []
    cursor = 0
    while True:
        found: dict[str, int] = {}
        pos = cursor
        ok = True
        for k, step in enumerate(steps):
            if step.optional:
                nxt = next((s for s in steps[k + 1:] if not s.optional), None)
                limit = len(hashes)
                if nxt is not None:
                    limit = _find(hashes, nxt.event_hash, pos, len(hashes))
                    if limit < 0:
                        ok = False
                        break
                hit = _find(hashes, step.event_hash, pos, limit)
                if hit >= 0:
                    found[step.name] = hit
                    pos = hit + 1
                continue
            hit = _find(hashes, step.event_hash, pos, len(hashes))
            if hit < 0:
                ok = False
                break
            found[step.name] = hit
            pos = hit + 1
        if not ok:
            return matches
        matches.append(found)
        cursor = max(found.values()) + 1


def _find(hashes, target, lo, hi) -> int:
    for i in range(lo, hi):
        if hashes[i] == target:
            return i
    return -1


def _anchor(pattern: Pattern) -> str:
    if pattern.anchor:
        return pattern.anchor
    required = [s.name for s in pattern.chain if not s.optional]
    return required[1] if len(required) > 1 else required[0]


def _chains(bundle, pattern, registry, strict, diag) -> list[FlashLoanRecord]:
    wanted = {s.event_hash for s in pattern.chain}
    allowed = _constraint(pattern, pattern.emitter, registry, strict)
    if allowed is not None and not allowed:
        diag.emit("detector_disabled", bundle.tx_hash, detector=_tag(pattern),
                  reason="empty emitter set")
        return []
    relevant = [log for log in bundle.logs
                if log.topic0 in wanted and (allowed is None or log.emitter in allowed)]
    if allowed is None:
        groups = [relevant]
    else:
        # every event of one match must come from the same contract
        groups = [[log for log in relevant if log.emitter == e]
                  for e in sorted({log.emitter for log in relevant})]
    anchor = _anchor(pattern)
    last = [s.name for s in pattern.chain if not s.optional][-1]
    out = []
    for logs in groups:
        for found in match_chain(logs, pattern.chain):
            steps = {name: (logs[i], bundle.emitting_frame(logs[i])) for name, i in found.items()}
            start = steps[anchor][0].after_call_index
            end = steps[last][0].after_call_index
            if end < start:
                diag.emit("span_unresolved", bundle.tx_hash, detector=_tag(pattern), frame=start)
                continue
            log, frame = steps[anchor]
            site = Site(bundle, frame, log, steps)
            try:
                out.append(extract_info(bundle, pattern, site, registry, diag, Span(start, end)))
            except ExtractionError as exc:
                diag.emit("extraction_failed", bundle.tx_hash, detector=_tag(pattern),
                          parameter=exc.parameter, frame=frame)
    return out


# -- UniswapV2 flash swaps ------------------------------------------------------

def _uniswapv2_flash_swaps(bundle, pattern, registry, diag) -> list[FlashLoanRecord]:
    book = registry.address_book
    if not book.known_pairs:
        diag.emit("detector_disabled", bundle.tx_hash, detector=_tag(pattern),
                  reason="no known pairs")
        return []
    moves = bundle.movements()
    out = []
    for call in bundle.calls:
        if call.selector != pattern.selector:
            continue
        pair = call.callee
        tokens = book.pair_tokens(pair)
        if tokens is None:
            continue
        args = call.args
        out0, out1 = abi.word(args, 0), abi.word(args, 1)
        to = abi.address_word(args, 2)
        data = abi.dynamic_bytes(args, 3)
        if out0 is None or out1 is None or to is None or data is None:
            diag.emit("extraction_failed", bundle.tx_hash, detector=_tag(pattern),
                      parameter="calldata", frame=call.index)
            continue
        if not data:
            continue  # ordinary swap
        callback = next(
            (c for c in bundle.children(call.index)
             if bundle.calls[c].callee == to and bundle.calls[c].selector == UNISWAP_V2_CALL),
            None,
        )
        if callback is None:
            continue
        if not abi.dynamic_bytes(bundle.calls[callback].args, 3):
            continue
        payback = next(
            (j for j in range(callback, bundle.subtree_end(callback) + 1)
             if moves[j] is not None and moves[j].to == pair and moves[j].sender != pair),
            None,
        )
        if payback is None:
            continue
        borrowed_token, amount = (tokens[0], out0) if out0 else (tokens[1], out1)
        out.append(FlashLoanRecord(
            provider=pattern.platform, service_provider=pair, runner=to,
            asset_in=moves[payback].token, asset_out=borrowed_token, amount_in=amount,
            block_number=bundle.block_number, tx_index=bundle.tx_index,
            tx_hash=bundle.tx_hash, span=Span(call.index, payback),
        ))
    return out
