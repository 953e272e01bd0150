"""Pattern catalog and address book.

The JSON file under ``data/default_registry.json`` is the built-in catalog.
User files use the same format plus a top-level ``mode`` of ``extend`` or
``replace``. Address constraints may name address-book sets with an ``@``
prefix (``@aave_lending_pool``, ``@known_pairs`` ...).
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .model import ModelError, to_address, to_selector, to_topic

PLATFORMS = (
    "Aave", "bZx", "UniswapV2", "dYdX", "UniswapV1", "Balancer", "OneInch",
    "Synthetix", "CurveFi", "Kyber", "Compound", "MakerDAO", "Opyn", "DeFiSaver",
)
CATEGORIES = (
    "FlashLoan", "Exchange", "LendingBorrowing", "MarginTrade", "Liquidation", "AntiLiquidation",
)
PRIMITIVE_CATEGORIES = ("Exchange", "LendingBorrowing", "MarginTrade", "Liquidation")
MATCHERS = ("function_selector", "event_topic", "ordered_event_chain", "composite")
COMPOSITES = ("uniswapv2_flash_swap", "bzx_margin_trade")
ROLES = ("behavior", "discovery")
LB_ACTIONS = ("Deposit", "Redeem", "Borrow", "Repay", "frob")

BOOK_SETS = ("aave_lending_pool", "uniswap_v2_factory", "dydx_solo_margin",
             "bzx_itokens", "defi_saver_emitters", "known_pairs")

_BASE_SOURCE = re.compile(
    r"(?:market:)?(?:topic:[0-3]|data:\d+|arg:\d+)\Z"
    r"|(?:emitter|caller|callee|tx\.sender|flow_in|flow_out|pair_in|pair_out|pair_amount_in)\Z"
    r"|const:0x[0-9a-f]+\Z"
)


class RegistryError(ValueError):
    """Malformed registry input; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class DuplicatePatternError(RegistryError):
    pass


@dataclass(frozen=True)
class ChainStep:
    name: str
    event_hash: str
    optional: bool = False


@dataclass(frozen=True)
class Pattern:
    platform: str
    category: str
    name: str
    matcher_kind: str
    selector: str | None = None
    event_hash: str | None = None
    chain: tuple[ChainStep, ...] = ()
    composite: str | None = None
    emitter: tuple[str, ...] = ()
    callee: tuple[str, ...] = ()
    parameter_map: tuple[tuple[str, str], ...] = ()
    action: str | None = None
    role: str = "behavior"
    anchor: str | None = None
    strict_only: bool = False
    placeholder: bool = False
    annotations: tuple[tuple[str, str], ...] = ()

    @property
    def params(self) -> dict[str, str]:
        return dict(self.parameter_map)

    @property
    def eventHash(self) -> str | None:  # noqa: N802  (camelCase alias used in docs)
        return self.event_hash

    @property
    def active(self) -> bool:
        return not self.placeholder

    def key(self) -> tuple:
        return (
            self.platform, self.category, self.matcher_kind, self.selector,
            self.event_hash, tuple(s.event_hash for s in self.chain), self.composite,
        )

    def to_json(self) -> dict:
        out: dict = {
            "platform": self.platform,
            "category": self.category,
            "name": self.name,
            "matcher_kind": self.matcher_kind,
        }
        if self.role != "behavior":
            out["role"] = self.role
        for attr in ("selector", "event_hash", "composite", "action", "anchor"):
            value = getattr(self, attr)
            if value is not None:
                out[attr] = value
        if self.chain:
            out["chain"] = [
                {"name": s.name, "event_hash": s.event_hash, **({"optional": True} if s.optional else {})}
                for s in self.chain
            ]
        if self.emitter:
            out["emitter"] = list(self.emitter)
        if self.callee:
            out["callee"] = list(self.callee)
        if self.strict_only:
            out["strict_only"] = True
        if self.placeholder:
            out["placeholder"] = True
        if self.parameter_map:
            out["parameter_map"] = dict(self.parameter_map)
        if self.annotations:
            out["annotations"] = dict(self.annotations)
        return out


class AddressBook:
    """Named addresses and address sets.

    Everything is fixed after load except ``known_pairs``, which only grows.
    Appends take a lock; readers get a snapshot copy.
    """

    def __init__(
        self,
        aave_lending_pool: str | None = None,
        uniswap_v2_factory: str | None = None,
        dydx_solo_margin: str | None = None,
        bzx_itokens: Iterable[str] = (),
        defi_saver_emitters: Iterable[str] = (),
        dydx_markets: Mapping[int, str] | None = None,
        known_pairs: Mapping[str, tuple[str, str]] | None = None,
    ):
        self.aave_lending_pool = to_address(aave_lending_pool) if aave_lending_pool else None
        self.uniswap_v2_factory = to_address(uniswap_v2_factory) if uniswap_v2_factory else None
        self.dydx_solo_margin = to_address(dydx_solo_margin) if dydx_solo_margin else None
        self.bzx_itokens = frozenset(to_address(a) for a in bzx_itokens)
        self.defi_saver_emitters = frozenset(to_address(a) for a in defi_saver_emitters)
        self.dydx_markets = {int(k): to_address(v) for k, v in (dydx_markets or {}).items()}
        self._pairs: dict[str, tuple[str, str]] = {}
        self._lock = threading.Lock()
        for pair, tokens in (known_pairs or {}).items():
            self.add_pair(pair, *tokens)

    def add_pair(self, pair: str, token0: str, token1: str) -> None:
        entry = (to_address(token0), to_address(token1))
        with self._lock:
            self._pairs.setdefault(to_address(pair), entry)

    @property
    def known_pairs(self) -> dict[str, tuple[str, str]]:
        with self._lock:
            return dict(self._pairs)

    def pair_tokens(self, pair: str) -> tuple[str, str] | None:
        return self._pairs.get(pair)

    def resolve(self, refs: Iterable[str]) -> frozenset[str] | None:
        """Expand constraint references; ``None`` means unconstrained."""
        refs = tuple(refs)
        if not refs:
            return None
        out: set[str] = set()
        for ref in refs:
            if ref.startswith("@"):
                value = self._named(ref[1:])
                if isinstance(value, str):
                    out.add(value)
                elif value:
                    out.update(value)
            else:
                out.add(ref)
        return frozenset(out)

    def _named(self, name: str):
        if name == "known_pairs":
            return self.known_pairs.keys()
        return getattr(self, name)

    def to_json(self, include_pairs: bool = True) -> dict:
        out = {
            "aave_lending_pool": self.aave_lending_pool,
            "uniswap_v2_factory": self.uniswap_v2_factory,
            "dydx_solo_margin": self.dydx_solo_margin,
            "bzx_itokens": sorted(self.bzx_itokens),
            "defi_saver_emitters": sorted(self.defi_saver_emitters),
            "dydx_markets": {str(k): v for k, v in sorted(self.dydx_markets.items())},
        }
        if include_pairs:
            out["known_pairs"] = {p: list(t) for p, t in sorted(self.known_pairs.items())}
        return out

    def __eq__(self, other):
        if not isinstance(other, AddressBook):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


@dataclass
class PatternRegistry:
    patterns: list[Pattern]
    address_book: AddressBook = field(default_factory=AddressBook)

    def find(self, platform: str, category: str) -> list[Pattern]:
        return [p for p in self.patterns if p.platform == platform and p.category == category]

    def by_category(self, category: str, role: str = "behavior") -> list[Pattern]:
        return [p for p in self.patterns if p.category == category and p.role == role]

    def named(self, platform: str, name: str) -> Pattern | None:
        for p in self.patterns:
            if p.platform == platform and p.name == name:
                return p
        return None

    def constraint(self, refs: Iterable[str]) -> frozenset[str] | None:
        return self.address_book.resolve(refs)

    def to_json(self, include_pairs: bool = True) -> dict:
        return {
            "mode": "replace",
            "address_book": self.address_book.to_json(include_pairs),
            "patterns": [p.to_json() for p in self.patterns],
        }

    def checksum(self) -> str:
        """Digest of everything except discovered pairs."""
        blob = json.dumps(self.to_json(include_pairs=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, PatternRegistry):
            return NotImplemented
        return self.patterns == other.patterns and self.address_book == other.address_book


def serialize(registry: PatternRegistry) -> str:
    return json.dumps(registry.to_json(), indent=2) + "\n"


def load_default() -> PatternRegistry:
    text = resources.files("thunderlens").joinpath("data/default_registry.json").read_text("utf-8")
    return parse_registry(text, base=None)


def load_from_file(path, base: PatternRegistry | None = None) -> PatternRegistry:
    """Load a registry file, extending ``base`` (default catalog) if asked."""
    text = Path(path).read_text("utf-8")
    return parse_registry(text, base=base if base is not None else load_default())


def parse_registry(text: str, base: PatternRegistry | None = None) -> PatternRegistry:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RegistryError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if not isinstance(doc, dict):
        raise RegistryError("", "top level must be an object")
    unknown = set(doc) - {"mode", "patterns", "address_book"}
    if unknown:
        raise RegistryError(sorted(unknown)[0], "unknown top-level field")
    mode = doc.get("mode", "extend")
    if mode not in ("extend", "replace"):
        raise RegistryError("mode", "must be 'extend' or 'replace'")
    raw_patterns = doc.get("patterns", [])
    if not isinstance(raw_patterns, list):
        raise RegistryError("patterns", "must be a list")
    parsed = [_parse_pattern(p, f"patterns[{i}]") for i, p in enumerate(raw_patterns)]
    book_doc = doc.get("address_book", {})
    if not isinstance(book_doc, dict):
        raise RegistryError("address_book", "must be an object")

    if mode == "replace" or base is None:
        patterns: list[Pattern] = []
        book = _parse_book(book_doc, None)
    else:
        patterns = list(base.patterns)
        book = _parse_book(book_doc, base.address_book)

    seen = {p.key(): i for i, p in enumerate(patterns)}
    for i, pattern in enumerate(parsed):
        slot = _placeholder_slot(patterns, pattern)
        if slot is not None:
            patterns[slot] = pattern
            seen = {p.key(): j for j, p in enumerate(patterns)}
            continue
        if pattern.key() in seen:
            raise DuplicatePatternError(
                f"patterns[{i}]",
                f"duplicate pattern ({pattern.platform}, {pattern.category}, {pattern.matcher_kind})",
            )
        seen[pattern.key()] = len(patterns)
        patterns.append(pattern)
    return PatternRegistry(patterns, book)


def _placeholder_slot(patterns: list[Pattern], new: Pattern) -> int | None:
    if new.placeholder:
        return None
    for i, p in enumerate(patterns):
        if (p.placeholder and p.platform == new.platform and p.category == new.category
                and p.matcher_kind == new.matcher_kind):
            return i
    return None


def _field(obj: dict, name: str, path: str, kind, required: bool = False):
    if name not in obj:
        if required:
            raise RegistryError(f"{path}.{name}", "required field missing")
        return None
    value = obj[name]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise RegistryError(f"{path}.{name}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def _wrap(fn, value, path):
    try:
        return fn(value, path)
    except ModelError as exc:
        raise RegistryError(path, exc.message) from None


def _address_refs(values, path) -> tuple[str, ...]:
    if values is None:
        return ()
    if not isinstance(values, list):
        raise RegistryError(path, "expected a list of addresses")
    out = []
    for i, v in enumerate(values):
        p = f"{path}[{i}]"
        if isinstance(v, str) and v.startswith("@"):
            if v[1:] not in BOOK_SETS:
                raise RegistryError(p, f"unknown address-book reference {v}")
            out.append(v)
        else:
            out.append(_wrap(to_address, v, p))
    return tuple(out)


def _check_source(source, path: str, steps: set[str]) -> str:
    if not isinstance(source, str):
        raise RegistryError(path, "source must be a string")
    base = source
    head, dot, rest = source.partition(".")
    if dot and head in steps:
        base = rest
    elif steps and dot and head != "tx":
        raise RegistryError(path, f"unknown chain step {head!r}")
    if not _BASE_SOURCE.match(base.lower()):
        raise RegistryError(path, f"unrecognized source {source!r}")
    return source.lower() if base.startswith("const:") else source


_PATTERN_FIELDS = {
    "platform", "category", "name", "matcher_kind", "selector", "event_hash", "chain",
    "composite", "emitter", "callee", "parameter_map", "action", "role", "anchor",
    "strict_only", "placeholder", "annotations",
}


def _parse_pattern(obj, path: str) -> Pattern:
    if not isinstance(obj, dict):
        raise RegistryError(path, "pattern must be an object")
    extra = set(obj) - _PATTERN_FIELDS
    if extra:
        raise RegistryError(f"{path}.{sorted(extra)[0]}", "unknown field")
    platform = _field(obj, "platform", path, str, True)
    if platform not in PLATFORMS and not platform.startswith("custom:"):
        raise RegistryError(f"{path}.platform", f"unknown platform {platform!r} (use 'custom:<name>')")
    category = _field(obj, "category", path, str, True)
    if category not in CATEGORIES:
        raise RegistryError(f"{path}.category", f"unknown category {category!r}")
    matcher = _field(obj, "matcher_kind", path, str, True)
    if matcher not in MATCHERS:
        raise RegistryError(f"{path}.matcher_kind", f"unknown matcher kind {matcher!r}")
    role = _field(obj, "role", path, str) or "behavior"
    if role not in ROLES:
        raise RegistryError(f"{path}.role", f"unknown role {role!r}")
    placeholder = bool(_field(obj, "placeholder", path, bool))
    name = _field(obj, "name", path, str) or platform

    selector = _field(obj, "selector", path, str)
    if selector is not None:
        selector = _wrap(to_selector, selector, f"{path}.selector")
    event_hash = _field(obj, "event_hash", path, str)
    if event_hash is not None:
        event_hash = _wrap(to_topic, event_hash, f"{path}.event_hash")

    chain: list[ChainStep] = []
    raw_chain = obj.get("chain")
    if raw_chain is not None:
        if not isinstance(raw_chain, list):
            raise RegistryError(f"{path}.chain", "expected a list")
        for i, step in enumerate(raw_chain):
            sp = f"{path}.chain[{i}]"
            if not isinstance(step, dict):
                raise RegistryError(sp, "chain step must be an object")
            chain.append(ChainStep(
                _field(step, "name", sp, str) or f"step{i}",
                _wrap(to_topic, _field(step, "event_hash", sp, str, True), f"{sp}.event_hash"),
                bool(_field(step, "optional", sp, bool)),
            ))

    composite = _field(obj, "composite", path, str)
    if matcher == "function_selector" and selector is None:
        raise RegistryError(f"{path}.selector", "function_selector pattern needs a selector")
    if matcher == "event_topic" and event_hash is None and not placeholder:
        raise RegistryError(f"{path}.event_hash", "event_topic pattern needs an event_hash")
    if matcher == "ordered_event_chain":
        if len(chain) < 2:
            raise RegistryError(f"{path}.chain", "a chain needs at least 2 steps")
        if sum(s.optional for s in chain) > 1:
            raise RegistryError(f"{path}.chain", "at most one optional step")
        if len({s.name for s in chain}) != len(chain):
            raise RegistryError(f"{path}.chain", "step names must be unique")
    if matcher == "composite":
        if composite not in COMPOSITES:
            raise RegistryError(f"{path}.composite", f"unknown composite detector {composite!r}")
    elif composite is not None:
        raise RegistryError(f"{path}.composite", "only composite patterns name a detector")

    steps = {s.name for s in chain}
    anchor = _field(obj, "anchor", path, str)
    if anchor is not None and anchor not in steps:
        raise RegistryError(f"{path}.anchor", "anchor must name a chain step")

    raw_map = obj.get("parameter_map", {})
    if not isinstance(raw_map, dict):
        raise RegistryError(f"{path}.parameter_map", "expected an object")
    params = tuple(
        (k, _check_source(v, f"{path}.parameter_map.{k}", steps)) for k, v in raw_map.items()
    )

    action = _field(obj, "action", path, str)
    if category == "LendingBorrowing" and role == "behavior" and action not in LB_ACTIONS:
        raise RegistryError(f"{path}.action", f"lending patterns need an action in {LB_ACTIONS}")

    raw_notes = obj.get("annotations", {})
    if not isinstance(raw_notes, dict) or not all(isinstance(v, str) for v in raw_notes.values()):
        raise RegistryError(f"{path}.annotations", "expected an object of strings")

    return Pattern(
        platform=platform, category=category, name=name, matcher_kind=matcher,
        selector=selector, event_hash=event_hash, chain=tuple(chain), composite=composite,
        emitter=_address_refs(obj.get("emitter"), f"{path}.emitter"),
        callee=_address_refs(obj.get("callee"), f"{path}.callee"),
        parameter_map=params, action=action, role=role, anchor=anchor,
        strict_only=bool(_field(obj, "strict_only", path, bool)),
        placeholder=placeholder, annotations=tuple(raw_notes.items()),
    )


def _parse_book(doc: dict, base: AddressBook | None) -> AddressBook:
    allowed = {"aave_lending_pool", "uniswap_v2_factory", "dydx_solo_margin", "bzx_itokens",
               "defi_saver_emitters", "dydx_markets", "known_pairs"}
    extra = set(doc) - allowed
    if extra:
        raise RegistryError(f"address_book.{sorted(extra)[0]}", "unknown field")

    def single(name):
        value = doc.get(name)
        if value is None:
            return getattr(base, name) if base else None
        return _wrap(to_address, value, f"address_book.{name}")

    def many(name):
        values = doc.get(name)
        current = set(getattr(base, name)) if base else set()
        if values is None:
            return current
        if not isinstance(values, list):
            raise RegistryError(f"address_book.{name}", "expected a list")
        return current | {_wrap(to_address, v, f"address_book.{name}[{i}]") for i, v in enumerate(values)}

    markets = dict(base.dydx_markets) if base else {}
    raw_markets = doc.get("dydx_markets", {})
    if not isinstance(raw_markets, dict):
        raise RegistryError("address_book.dydx_markets", "expected an object")
    for k, v in raw_markets.items():
        if not str(k).isdigit():
            raise RegistryError(f"address_book.dydx_markets.{k}", "market ids are integers")
        markets[int(k)] = _wrap(to_address, v, f"address_book.dydx_markets.{k}")

    pairs = dict(base.known_pairs) if base else {}
    raw_pairs = doc.get("known_pairs", {})
    if not isinstance(raw_pairs, dict):
        raise RegistryError("address_book.known_pairs", "expected an object")
    for k, v in raw_pairs.items():
        p = f"address_book.known_pairs.{k}"
        if not isinstance(v, list) or len(v) != 2:
            raise RegistryError(p, "expected [token0, token1]")
        pairs[_wrap(to_address, k, p)] = (_wrap(to_address, v[0], p), _wrap(to_address, v[1], p))

    return AddressBook(
        aave_lending_pool=single("aave_lending_pool"),
        uniswap_v2_factory=single("uniswap_v2_factory"),
        dydx_solo_margin=single("dydx_solo_margin"),
        bzx_itokens=many("bzx_itokens"),
        defi_saver_emitters=many("defi_saver_emitters"),
        dydx_markets=markets,
        known_pairs=pairs,
    )


def with_address_book(registry: PatternRegistry, **changes) -> PatternRegistry:
    """Copy of ``registry`` with some address-book fields replaced."""
    doc = registry.address_book.to_json()
    for key, value in changes.items():
        doc[key] = value
    return PatternRegistry(list(registry.patterns), _parse_book(doc, None))


__all__ = [
    "AddressBook", "ChainStep", "DuplicatePatternError", "Pattern", "PatternRegistry",
    "RegistryError", "load_default", "load_from_file", "parse_registry", "serialize",
    "with_address_book",
]
