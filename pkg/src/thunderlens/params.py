"""Resolve parameter-map sources against a match site.

A source is a short string such as ``topic:1``, ``data:3``, ``arg:0``,
``emitter``, ``caller``, ``flow_in`` or ``market:data:1``. Chain patterns
prefix the source with a step name (``LogWithdraw.topic:1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import abi
from .model import EventLog, TransactionBundle
from .registry import AddressBook

ADDRESS, ASSET, AMOUNT = "address", "asset", "amount"

FIELD_KIND = {
    "service_provider": ADDRESS,
    "runner": ADDRESS,
    "receiver": ADDRESS,
    "recipient": ADDRESS,
    "asset_in": ASSET,
    "asset_out": ASSET,
    "amount_in": AMOUNT,
    "dink": "signed",
    "dart": "signed",
}


@dataclass
class Site:
    """Where a pattern fired: a log (event patterns) or a call (selector patterns)."""

    bundle: TransactionBundle
    frame: int
    log: EventLog | None = None
    steps: dict[str, tuple[EventLog, int]] = field(default_factory=dict)

    @property
    def end(self) -> int:
        return self.bundle.subtree_end(self.frame)

    @property
    def provider(self) -> str:
        return self.log.emitter if self.log is not None else self.bundle.calls[self.frame].callee


def resolve(site: Site, source: str, kind: str, book: AddressBook):
    head, dot, rest = source.partition(".")
    if dot and head in site.steps:
        log, frame = site.steps[head]
        site = Site(site.bundle, frame, log)
        source = rest
    return _resolve_base(site, source, kind, book)


def _shape(value: int | None, kind: str):
    if value is None:
        return None
    if kind == ADDRESS:
        return abi.address_from_int(value)
    if kind == ASSET:
        return abi.asset_from_int(value)
    if kind == "signed":
        return value - (1 << 256) if value >> 255 else value
    return value


def _raw(site: Site, source: str) -> int | None:
    kind, _, n = source.partition(":")
    if kind == "topic":
        if site.log is None:
            return None
        i = int(n)
        return int(site.log.topics[i], 16) if i < len(site.log.topics) else None
    if kind == "data":
        return None if site.log is None else abi.word(site.log.data, int(n))
    if kind == "arg":
        return abi.word(site.bundle.calls[site.frame].args, int(n))
    return None


def _resolve_base(site: Site, source: str, kind: str, book: AddressBook):
    call = site.bundle.calls[site.frame]
    if source.startswith(("topic:", "data:", "arg:")):
        return _shape(_raw(site, source), kind)
    if source.startswith("market:"):
        market = _raw(site, source[len("market:"):])
        return None if market is None else book.dydx_markets.get(market)
    if source.startswith("const:"):
        return _shape(int(source[len("const:"):], 16), kind)
    if source == "emitter":
        return site.log.emitter if site.log is not None else None
    if source == "caller":
        return call.caller
    if source == "callee":
        return call.callee
    if source == "tx.sender":
        return site.bundle.sender
    if source in ("flow_in", "flow_out"):
        move = flow_in(site) if source == "flow_in" else flow_out(site)
        if move is None:
            return None
        if kind == AMOUNT:
            return move.amount
        if kind == ASSET:
            return move.token
        return move.sender if source == "flow_in" else move.to
    if source in ("pair_in", "pair_out", "pair_amount_in"):
        return _pair_side(site, source, kind, book)
    return None


def flow_in(site: Site):
    """Last asset movement into the provider at or before the span end."""
    provider = site.provider
    moves = site.bundle.movements()
    for i in range(site.end, -1, -1):
        m = moves[i]
        if m is not None and m.to == provider and m.sender != provider:
            return m
    return None


def flow_out(site: Site):
    """First asset movement out of the provider inside the span."""
    provider = site.provider
    moves = site.bundle.movements()
    for i in range(site.frame, site.end + 1):
        m = moves[i]
        if m is not None and m.sender == provider and m.to != provider:
            return m
    return None


def _pair_side(site: Site, source: str, kind: str, book: AddressBook):
    """UniswapV2 ``Swap`` amounts (in0, in1, out0, out1) mapped onto the pair tokens."""
    if site.log is None:
        return None
    words = [abi.word(site.log.data, i) for i in range(4)]
    if None in words:
        return None
    in0, in1, out0, out1 = words
    if source == "pair_amount_in":
        return in0 if in0 else in1
    tokens = book.pair_tokens(site.log.emitter)
    if tokens is None:
        move = flow_in(site) if source == "pair_in" else flow_out(site)
        return None if move is None else move.token
    if source == "pair_in":
        return tokens[0] if in0 else tokens[1]
    return tokens[0] if out0 else tokens[1]


def extract(site: Site, parameter_map: dict[str, str], book: AddressBook) -> dict:
    """Resolve every mapped field; unresolvable fields come back as ``None``."""
    out = {}
    for name, source in parameter_map.items():
        out[name] = resolve(site, source, FIELD_KIND.get(name, ADDRESS), book)
    return out
