"""Domain types shared by every stage: call frames, logs and bundles.

Addresses, selectors and topic hashes are kept as lowercase ``0x`` hex
strings. They are hashable, cheap to compare and serialize as-is.
Amounts are exact Python ints.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator

from . import abi

ETH = "0xeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeeee"
TRANSFER = "0xa9059cbb"
TRANSFER_FROM = "0x23b872dd"
UINT256_MAX = (1 << 256) - 1

_HEX = re.compile(r"0x[0-9a-f]*\Z")


class ModelError(ValueError):
    """Invariant violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


def _hex_of_size(value, size: int, what: str, path: str) -> str:
    if isinstance(value, (bytes, bytearray)):
        if len(value) != size:
            raise ModelError(path, f"{what} must be {size} bytes")
        return "0x" + bytes(value).hex()
    if not isinstance(value, str):
        raise ModelError(path, f"{what} must be a hex string")
    text = value.lower()
    if not _HEX.match(text) or len(text) % 2:
        raise ModelError(path, f"{what} is not valid hex")
    if len(text) != 2 + 2 * size:
        raise ModelError(path, f"{what} must be {size} bytes")
    return text


def to_address(value, path: str = "") -> str:
    return _hex_of_size(value, 20, "address", path)


def to_selector(value, path: str = "") -> str:
    return _hex_of_size(value, 4, "selector", path)


def to_topic(value, path: str = "") -> str:
    return _hex_of_size(value, 32, "topic", path)


def hex_to_bytes(value: str, path: str = "") -> bytes:
    if not isinstance(value, str):
        raise ModelError(path, "expected hex string")
    text = value.lower()
    if not _HEX.match(text) or len(text) % 2:
        raise ModelError(path, "not valid hex")
    return bytes.fromhex(text[2:])


def _check_uint(value, path: str, bits: int = 256) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ModelError(path, "expected an integer")
    if value < 0 or value >> bits:
        raise ModelError(path, f"must fit in uint{bits}")
    return value


@dataclass(frozen=True, slots=True)
class InternalCall:
    index: int
    depth: int
    caller: str
    callee: str
    selector: str | None = None
    calldata: bytes = b""
    value: int = 0

    def __post_init__(self):
        _check_uint(self.index, "index", 64)
        _check_uint(self.depth, "depth", 64)
        object.__setattr__(self, "caller", to_address(self.caller, "caller"))
        object.__setattr__(self, "callee", to_address(self.callee, "callee"))
        if self.selector is not None:
            object.__setattr__(self, "selector", to_selector(self.selector, "selector"))
        if not isinstance(self.calldata, (bytes, bytearray)):
            raise ModelError("calldata", "expected bytes")
        object.__setattr__(self, "calldata", bytes(self.calldata))
        if self.selector is None:
            if len(self.calldata) >= 4:
                raise ModelError("selector", "calldata of 4+ bytes must carry its selector")
        elif self.calldata[:4].hex() != self.selector[2:]:
            raise ModelError("selector", "selector does not prefix the calldata")
        _check_uint(self.value, "value")

    @property
    def args(self) -> bytes:
        """Calldata with the selector stripped."""
        return self.calldata[4:] if self.selector is not None else self.calldata


@dataclass(frozen=True, slots=True)
class EventLog:
    log_index: int
    emitter: str
    topics: tuple[str, ...]
    data: bytes
    after_call_index: int

    def __post_init__(self):
        _check_uint(self.log_index, "logIndex", 64)
        object.__setattr__(self, "emitter", to_address(self.emitter, "emitter"))
        topics = tuple(self.topics)
        if len(topics) > 4:
            raise ModelError("topics", "at most 4 topics")
        object.__setattr__(
            self, "topics", tuple(to_topic(t, f"topics[{i}]") for i, t in enumerate(topics))
        )
        if not isinstance(self.data, (bytes, bytearray)):
            raise ModelError("data", "expected bytes")
        object.__setattr__(self, "data", bytes(self.data))
        _check_uint(self.after_call_index, "afterCallIndex", 64)

    @property
    def topic0(self) -> str | None:
        return self.topics[0] if self.topics else None


@dataclass(frozen=True, slots=True)
class TokenTransfer:
    token: str
    sender: str
    to: str
    amount: int


@dataclass(frozen=True, slots=True)
class Span:
    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ModelError("span", f"malformed span ({self.start}, {self.end})")

    def contains(self, other: "Span") -> bool:
        return self.start <= other.start and other.end <= self.end

    def to_json(self) -> dict:
        return {"intStart": self.start, "intEnd": self.end}

    @classmethod
    def from_json(cls, obj: dict) -> "Span":
        return cls(obj["intStart"], obj["intEnd"])


@dataclass(frozen=True)
class TransactionBundle:
    tx_hash: str
    block_number: int
    tx_index: int
    sender: str
    calls: tuple[InternalCall, ...]
    logs: tuple[EventLog, ...] = ()
    reverted: bool = False
    _ends: tuple[int, ...] = field(default=(), repr=False, compare=False)
    _parents: tuple[int, ...] = field(default=(), repr=False, compare=False)
    _moves: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tx_hash", to_topic(self.tx_hash, "txHash"))
        _check_uint(self.block_number, "blockNumber", 64)
        _check_uint(self.tx_index, "txIndex", 64)
        object.__setattr__(self, "sender", to_address(self.sender, "sender"))
        calls = tuple(self.calls)
        logs = tuple(self.logs)
        object.__setattr__(self, "calls", calls)
        object.__setattr__(self, "logs", logs)
        if not isinstance(self.reverted, bool):
            raise ModelError("reverted", "expected a boolean")
        if not calls:
            raise ModelError("calls", "a bundle needs at least the external call")
        ends, parents = _tree(calls)
        object.__setattr__(self, "_ends", ends)
        object.__setattr__(self, "_parents", parents)
        for i, log in enumerate(logs):
            if log.log_index != i:
                raise ModelError(f"logs[{i}].logIndex", f"expected {i}, got {log.log_index}")
            if log.after_call_index >= len(calls):
                raise ModelError(
                    f"logs[{i}].afterCallIndex",
                    f"{log.after_call_index} is outside 0..{len(calls) - 1}",
                )

    def movements(self) -> tuple[TokenTransfer | None, ...]:
        """Per-call asset movement (see ``asset_movement``), computed once."""
        if self._moves is None:
            object.__setattr__(self, "_moves", tuple(asset_movement(c) for c in self.calls))
        return self._moves

    def subtree_end(self, index: int) -> int:
        """Index of the last descendant of ``index`` (itself for leaves)."""
        return self._ends[index]

    def parent(self, index: int) -> int:
        """Parent frame index, or -1 for the external call."""
        return self._parents[index]

    def children(self, index: int) -> Iterator[int]:
        end = self._ends[index]
        child = index + 1
        while child <= end:
            yield child
            child = self._ends[child] + 1

    def emitting_frame(self, log: EventLog) -> int:
        """Frame that emitted ``log``.

        ``afterCallIndex`` is the most recently entered frame when the log was
        written, which is the emitter itself or one of its descendants. Walk
        up until the callee matches the emitter; fall back to the recorded
        index when nothing matches.
        """
        i = log.after_call_index
        while i >= 0:
            if self.calls[i].callee == log.emitter:
                return i
            i = self._parents[i]
        return log.after_call_index


def _tree(calls: tuple[InternalCall, ...]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    n = len(calls)
    ends = list(range(n))
    parents = [-1] * n
    stack: list[int] = []
    for i, call in enumerate(calls):
        if not isinstance(call, InternalCall):
            raise ModelError(f"calls[{i}]", "expected an InternalCall")
        if call.index != i:
            raise ModelError(f"calls[{i}].index", f"expected {i}, got {call.index}")
        if i == 0:
            if call.depth != 0:
                raise ModelError("calls[0].depth", "the external call has depth 0")
        elif call.depth < 1 or call.depth > calls[i - 1].depth + 1:
            raise ModelError(
                f"calls[{i}].depth",
                f"depth {call.depth} cannot follow depth {calls[i - 1].depth}",
            )
        while stack and calls[stack[-1]].depth >= call.depth:
            stack.pop()
        parents[i] = stack[-1] if stack else -1
        stack.append(i)
    for i in range(n - 1, -1, -1):
        p = parents[i]
        if p >= 0 and ends[i] > ends[p]:
            ends[p] = ends[i]
    return tuple(ends), tuple(parents)


def token_transfer_view(call: InternalCall) -> TokenTransfer | None:
    """Decode an ERC20 ``transfer``/``transferFrom`` call; ``None`` otherwise."""
    if call.selector == TRANSFER:
        args = call.calldata[4:]
        to = abi.address_word(args, 0)
        amount = abi.word(args, 1)
        if to is None or amount is None:
            return None
        return TokenTransfer(call.callee, call.caller, to, amount)
    if call.selector == TRANSFER_FROM:
        args = call.calldata[4:]
        src = abi.address_word(args, 0)
        to = abi.address_word(args, 1)
        amount = abi.word(args, 2)
        if src is None or to is None or amount is None:
            return None
        return TokenTransfer(call.callee, src, to, amount)
    return None


def asset_movement(call: InternalCall) -> TokenTransfer | None:
    """Token transfer carried by ``call``, or its attached ETH value."""
    moved = token_transfer_view(call)
    if moved is not None:
        return moved
    if call.value > 0:
        return TokenTransfer(ETH, call.caller, call.callee, call.value)
    return None
