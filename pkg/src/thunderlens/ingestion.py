"""Fixture (de)serialization, corpus assembly and UniswapV2 pair discovery."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from . import abi
from .model import (
    EventLog, InternalCall, ModelError, TransactionBundle, hex_to_bytes,
)
from .registry import PatternRegistry


class FixtureError(ValueError):
    """A fixture file violates the schema or a model invariant."""

    def __init__(self, source: str, path: str, message: str):
        where = f"{source}: " if source else ""
        super().__init__(f"{where}{path}: {message}" if path else f"{where}{message}")
        self.source = source
        self.path = path
        self.message = message


class DuplicateTransactionError(FixtureError):
    pass


@dataclass(frozen=True)
class BundleSource:
    """Where bundles come from. Exactly one of the fields is set."""

    fixture_file: Path | None = None
    fixture_dir: Path | None = None
    rpc_url: str | None = None
    tx_hashes: tuple[str, ...] = ()
    block_range: tuple[int, int] | None = None

    def __post_init__(self):
        kinds = [self.fixture_file is not None, self.fixture_dir is not None, self.rpc_url is not None]
        if sum(kinds) != 1:
            raise ValueError("BundleSource needs exactly one of fixture_file, fixture_dir, rpc_url")
        if self.rpc_url is not None and bool(self.tx_hashes) == (self.block_range is not None):
            raise ValueError("an RPC source needs either tx hashes or a block range")

    @classmethod
    def file(cls, path) -> "BundleSource":
        return cls(fixture_file=Path(path))

    @classmethod
    def directory(cls, path) -> "BundleSource":
        return cls(fixture_dir=Path(path))


@dataclass
class Corpus:
    bundles: list[TransactionBundle] = field(default_factory=list)

    def __post_init__(self):
        self.bundles = sorted(self.bundles, key=lambda b: (b.block_number, b.tx_index, b.tx_hash))
        seen: set[str] = set()
        for b in self.bundles:
            if b.tx_hash in seen:
                raise DuplicateTransactionError("", "txHash", f"duplicate transaction {b.tx_hash}")
            seen.add(b.tx_hash)

    def __len__(self) -> int:
        return len(self.bundles)

    def __iter__(self):
        return iter(self.bundles)

    def get(self, tx_hash: str) -> TransactionBundle | None:
        tx_hash = tx_hash.lower()
        for b in self.bundles:
            if b.tx_hash == tx_hash:
                return b
        return None

    def identity(self) -> str:
        """Digest of the sorted transaction hashes."""
        h = hashlib.sha256()
        for tx in sorted(b.tx_hash for b in self.bundles):
            h.update(tx.encode())
        return h.hexdigest()


# -- fixture schema ---------------------------------------------------------

def bundle_to_json(bundle: TransactionBundle) -> dict:
    return {
        "txHash": bundle.tx_hash,
        "blockNumber": bundle.block_number,
        "txIndex": bundle.tx_index,
        "sender": bundle.sender,
        "reverted": bundle.reverted,
        "calls": [
            {
                "index": c.index,
                "depth": c.depth,
                "caller": c.caller,
                "callee": c.callee,
                "selector": c.selector,
                "calldata": "0x" + c.calldata.hex(),
                "value": str(c.value),
            }
            for c in bundle.calls
        ],
        "logs": [
            {
                "logIndex": log.log_index,
                "emitter": log.emitter,
                "topics": list(log.topics),
                "data": "0x" + log.data.hex(),
                "afterCallIndex": log.after_call_index,
            }
            for log in bundle.logs
        ],
    }


def dumps_bundle(bundle: TransactionBundle) -> str:
    return json.dumps(bundle_to_json(bundle), indent=1) + "\n"


_TOP = {"txHash": str, "blockNumber": int, "txIndex": int, "sender": str,
        "reverted": bool, "calls": list, "logs": list}
_CALL = {"index": int, "depth": int, "caller": str, "callee": str,
         "selector": (str, type(None)), "calldata": str, "value": str}
_LOG = {"logIndex": int, "emitter": str, "topics": list, "data": str, "afterCallIndex": int}


def _check_shape(obj, shape: dict, prefix: str) -> None:
    if not isinstance(obj, dict):
        raise ModelError(prefix or "$", "expected an object")
    for key, kind in shape.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in obj:
            raise ModelError(path, "missing field")
        value = obj[key]
        if kind is int and isinstance(value, bool):
            raise ModelError(path, "expected an integer")
        if not isinstance(value, kind):
            raise ModelError(path, "wrong type")
    extra = set(obj) - set(shape)
    if extra:
        key = sorted(extra)[0]
        raise ModelError(f"{prefix}.{key}" if prefix else key, "unknown field")


def _prefixed(path: str, exc: ModelError) -> ModelError:
    return ModelError(f"{path}.{exc.path}" if exc.path else path, exc.message)


def bundle_from_json(doc) -> TransactionBundle:
    """Strict decoder; errors carry the JSON field path."""
    _check_shape(doc, _TOP, "")
    calls = []
    for i, c in enumerate(doc["calls"]):
        path = f"calls[{i}]"
        _check_shape(c, _CALL, path)
        value = c["value"]
        if not (value.isascii() and value.isdigit()):
            raise ModelError(f"{path}.value", "expected a decimal string")
        try:
            calls.append(InternalCall(
                index=c["index"], depth=c["depth"], caller=c["caller"], callee=c["callee"],
                selector=c["selector"], calldata=hex_to_bytes(c["calldata"], "calldata"),
                value=int(value),
            ))
        except ModelError as exc:
            raise _prefixed(path, exc) from None
    logs = []
    for i, entry in enumerate(doc["logs"]):
        path = f"logs[{i}]"
        _check_shape(entry, _LOG, path)
        try:
            logs.append(EventLog(
                log_index=entry["logIndex"], emitter=entry["emitter"], topics=tuple(entry["topics"]),
                data=hex_to_bytes(entry["data"], "data"), after_call_index=entry["afterCallIndex"],
            ))
        except ModelError as exc:
            raise _prefixed(path, exc) from None
    return TransactionBundle(
        tx_hash=doc["txHash"], block_number=doc["blockNumber"], tx_index=doc["txIndex"],
        sender=doc["sender"], calls=tuple(calls), logs=tuple(logs), reverted=doc["reverted"],
    )


def loads_bundle(text: str, source: str = "") -> TransactionBundle:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FixtureError(source, f"line {exc.lineno}", exc.msg) from None
    try:
        return bundle_from_json(doc)
    except ModelError as exc:
        raise FixtureError(source, exc.path, exc.message) from None


def read_fixture(path) -> TransactionBundle:
    path = Path(path)
    return loads_bundle(path.read_text("utf-8"), str(path))


def fixture_name(tx_hash: str) -> str:
    return f"{tx_hash}.json"


def write_fixture(bundle: TransactionBundle, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / fixture_name(bundle.tx_hash)
    tmp = target.with_suffix(".json.tmp")
    tmp.write_text(dumps_bundle(bundle), "utf-8")
    os.replace(tmp, target)
    return target


def write_fixtures(corpus: Corpus | Iterable[TransactionBundle], directory) -> list[Path]:
    return [write_fixture(b, directory) for b in corpus]


def fixture_paths(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"fixture directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix == ".json" and p.is_file())


def load_fixtures(source) -> Corpus:
    """Load a fixture file or directory into a sorted, validated corpus."""
    if not isinstance(source, BundleSource):
        path = Path(source)
        source = BundleSource.file(path) if path.is_file() else BundleSource.directory(path)
    if source.fixture_file is not None:
        paths = [source.fixture_file]
        if not source.fixture_file.is_file():
            raise FileNotFoundError(f"fixture file not found: {source.fixture_file}")
    elif source.fixture_dir is not None:
        paths = fixture_paths(source.fixture_dir)
    else:
        from .rpc import fetch_corpus  # RPC sources are served by the client module
        return fetch_corpus(source)
    bundles = [read_fixture(p) for p in paths]
    try:
        return Corpus(bundles)
    except DuplicateTransactionError as exc:
        raise DuplicateTransactionError(str(source.fixture_dir or source.fixture_file),
                                        exc.path, exc.message) from None


# -- pair discovery -----------------------------------------------------------

def discover_pairs(corpus: Corpus | Iterable[TransactionBundle], registry: PatternRegistry) -> set[str]:
    """Collect pairs announced by the factory's PairCreated logs.

    Found pairs are merged into ``registry.address_book`` as a side effect.
    """
    pattern = registry.named("UniswapV2", "PairCreated")
    if pattern is None or pattern.event_hash is None:
        return set()
    factories = registry.constraint(pattern.emitter)
    params = pattern.params
    found: set[str] = set()
    for bundle in corpus:
        if bundle.reverted:
            continue
        for log in bundle.logs:
            if log.topic0 != pattern.event_hash:
                continue
            if factories is not None and log.emitter not in factories:
                continue
            pair = _read_address(log, params.get("pair", "data:0"))
            token0 = _read_address(log, params.get("token0", "topic:1"))
            token1 = _read_address(log, params.get("token1", "topic:2"))
            if pair is None or token0 is None or token1 is None:
                continue
            registry.address_book.add_pair(pair, token0, token1)
            found.add(pair)
    return found


def _read_address(log: EventLog, source: str) -> str | None:
    kind, _, n = source.partition(":")
    if kind == "topic":
        i = int(n)
        return abi.address_from_int(int(log.topics[i], 16)) if i < len(log.topics) else None
    if kind == "data":
        return abi.address_word(log.data, int(n))
    return None


__all__ = [
    "BundleSource", "Corpus", "DuplicateTransactionError", "FixtureError", "bundle_from_json",
    "bundle_to_json", "discover_pairs", "dumps_bundle", "load_fixtures", "loads_bundle",
    "read_fixture", "write_fixture", "write_fixtures",
]
