"""Archive-node client: receipts plus ``callTracer`` traces into bundles.

Frames are flattened depth-first (parent before children before the next
sibling). Every frame the tracer reports counts, including static and
delegate calls. A log's ``afterCallIndex`` is recovered from the tracer's
``position`` field, the number of child frames entered before the log.
Logs of failed frames are dropped because the chain discarded them.
"""

from __future__ import annotations

import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable

import requests

from .ingestion import BundleSource, Corpus, fixture_name, read_fixture, write_fixture
from .model import EventLog, InternalCall, TransactionBundle, hex_to_bytes, to_topic

TRACE_CONFIG = {"tracer": "callTracer", "tracerConfig": {"withLog": True}}
METHOD_NOT_FOUND = -32601
_JSON_DEPTH = 5000


class RpcError(Exception):
    pass


class TransportError(RpcError):
    """The node could not be reached or answered garbage."""


class CapabilityError(RpcError):
    """The node does not offer a required method."""

    def __init__(self, method: str, detail: str = ""):
        super().__init__(f"node does not support {method}" + (f": {detail}" if detail else ""))
        self.method = method


class NotFoundError(RpcError):
    def __init__(self, tx_hash: str):
        super().__init__(f"transaction not found: {tx_hash}")
        self.tx_hash = tx_hash


def _int(value) -> int:
    if value is None:
        return 0
    if isinstance(value, int):
        return value
    return int(value, 16) if value.startswith(("0x", "0X")) else int(value)


class RpcClient:
    def __init__(self, url: str, cache_dir=None, timeout: float = 30.0, max_in_flight: int = 4,
                 session: requests.Session | None = None):
        self.url = url
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.timeout = timeout
        self.max_in_flight = max(1, max_in_flight)
        self.session = session or requests.Session()
        self._ids = 0
        self._lock = threading.Lock()

    def call(self, method: str, params: list):
        with self._lock:
            self._ids += 1
            rid = self._ids
        body = {"jsonrpc": "2.0", "id": rid, "method": method, "params": params}
        try:
            resp = self.session.post(self.url, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"{self.url}: {exc.__class__.__name__}: {exc}") from None
        if sys.getrecursionlimit() < _JSON_DEPTH:
            sys.setrecursionlimit(_JSON_DEPTH)  # a max-depth trace nests about 2k JSON levels
        try:
            doc = resp.json()
        except (ValueError, RecursionError):
            raise TransportError(f"{self.url}: HTTP {resp.status_code}, body is not JSON") from None
        if not isinstance(doc, dict):
            raise TransportError(f"{self.url}: unexpected response shape")
        err = doc.get("error")
        if err:
            code = err.get("code") if isinstance(err, dict) else None
            msg = err.get("message", "") if isinstance(err, dict) else str(err)
            if code == METHOD_NOT_FOUND or "not found" in msg.lower() and "method" in msg.lower():
                raise CapabilityError(method, msg)
            raise TransportError(f"{method}: {msg} (code {code})")
        if resp.status_code != 200:
            raise TransportError(f"{self.url}: HTTP {resp.status_code}")
        return doc.get("result")

    # -- transactions ----------------------------------------------------------------

    def fetch_bundle(self, tx_hash: str) -> TransactionBundle:
        tx_hash = to_topic(tx_hash, "txHash")
        cached = self._cached(tx_hash)
        if cached is not None:
            return cached
        tx = self.call("eth_getTransactionByHash", [tx_hash])
        receipt = self.call("eth_getTransactionReceipt", [tx_hash])
        if tx is None or receipt is None:
            raise NotFoundError(tx_hash)
        trace = self.call("debug_traceTransaction", [tx_hash, TRACE_CONFIG])
        if not isinstance(trace, dict):
            raise TransportError(f"debug_traceTransaction: no trace for {tx_hash}")
        bundle = bundle_from_trace(tx_hash, tx, receipt, trace)
        if self.cache_dir is not None:
            write_fixture(bundle, self.cache_dir)
        return bundle

    def _cached(self, tx_hash: str) -> TransactionBundle | None:
        if self.cache_dir is None:
            return None
        path = self.cache_dir / fixture_name(tx_hash)
        return read_fixture(path) if path.is_file() else None

    def block_transactions(self, number: int) -> list[str]:
        block = self.call("eth_getBlockByNumber", [hex(number), False])
        if block is None:
            raise NotFoundError(f"block {number}")
        return [t if isinstance(t, str) else t["hash"] for t in block.get("transactions", [])]

    def fetch_many(self, hashes: Iterable[str]) -> list[TransactionBundle]:
        hashes = list(hashes)
        if self.max_in_flight == 1 or len(hashes) <= 1:
            return [self.fetch_bundle(h) for h in hashes]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self.fetch_bundle, hashes))


def fetch_bundle(endpoint: str, tx_hash: str, cache_dir=None) -> TransactionBundle:
    return RpcClient(endpoint, cache_dir).fetch_bundle(tx_hash)


def fetch_corpus(source: BundleSource, cache_dir=None, max_in_flight: int = 4) -> Corpus:
    client = RpcClient(source.rpc_url, cache_dir, max_in_flight=max_in_flight)
    hashes = list(source.tx_hashes)
    if source.block_range is not None:
        lo, hi = source.block_range
        for n in range(lo, hi + 1):
            hashes.extend(client.block_transactions(n))
    return Corpus(client.fetch_many(hashes))


# -- trace flattening ------------------------------------------------------------------------

def _frame_call(frame: dict, index: int, depth: int, receipt: dict) -> InternalCall:
    kind = str(frame.get("type", "CALL")).upper()
    callee = frame.get("to") or receipt.get("contractAddress")
    if callee is None:
        raise TransportError(f"trace frame {index} has no callee")
    data = b"" if kind.startswith("CREATE") else hex_to_bytes(frame.get("input") or "0x", f"calls[{index}].input")
    selector = "0x" + data[:4].hex() if len(data) >= 4 else None
    return InternalCall(index, depth, frame["from"].lower(), callee.lower(), selector, data,
                        _int(frame.get("value")))


def bundle_from_trace(tx_hash: str, tx: dict, receipt: dict, trace: dict) -> TransactionBundle:
    """Flatten a ``callTracer`` trace into a bundle."""
    calls: list[InternalCall] = []
    raw_logs: list[tuple[dict, int]] = []

    def visit(frame: dict, depth: int, failed: bool):
        # yields each child to the driver loop below; traces nest up to 1024 frames
        calls.append(_frame_call(frame, len(calls), depth, receipt))
        failed = failed or bool(frame.get("error"))
        children = frame.get("calls") or []
        logs = sorted(enumerate(frame.get("logs") or []),
                      key=lambda p: (_int(p[1].get("position", len(children))), p[0]))
        pending = iter(logs)
        nxt = next(pending, None)
        for k, child in enumerate(children):
            while nxt is not None and _int(nxt[1].get("position", len(children))) <= k:
                if not failed:
                    raw_logs.append((nxt[1], len(calls) - 1))
                nxt = next(pending, None)
            yield child, depth + 1, failed
        while nxt is not None:
            if not failed:
                raw_logs.append((nxt[1], len(calls) - 1))
            nxt = next(pending, None)

    stack = [visit(trace, 0, False)]
    while stack:
        child = next(stack[-1], None)
        if child is None:
            stack.pop()
        else:
            stack.append(visit(*child))
    receipt_logs = receipt.get("logs") or []
    if receipt_logs and len(receipt_logs) != len(raw_logs):
        raise TransportError(
            f"{tx_hash}: trace has {len(raw_logs)} logs, receipt has {len(receipt_logs)}")
    logs = []
    for i, (tlog, after) in enumerate(raw_logs):
        src = receipt_logs[i] if receipt_logs else tlog
        logs.append(EventLog(i, src["address"].lower(), tuple(t.lower() for t in src.get("topics", [])),
                             hex_to_bytes(src.get("data") or "0x", f"logs[{i}].data"), after))
    return TransactionBundle(
        tx_hash=tx_hash,
        block_number=_int(receipt.get("blockNumber", tx.get("blockNumber"))),
        tx_index=_int(receipt.get("transactionIndex", tx.get("transactionIndex"))),
        sender=(tx.get("from") or trace["from"]).lower(),
        calls=tuple(calls),
        logs=tuple(logs),
        reverted=_int(receipt.get("status", "0x1")) == 0,
    )


def trace_from_bundle(bundle: TransactionBundle) -> tuple[dict, dict, dict]:
    """Inverse view used by tests and mocks: (tx, receipt, callTracer trace)."""
    frames: list[dict] = []
    stack: list[dict] = []
    for call in bundle.calls:
        frame = {
            "type": "CALL", "from": call.caller, "to": call.callee,
            "input": "0x" + call.calldata.hex(), "value": hex(call.value), "calls": [], "logs": [],
        }
        del stack[call.depth:]
        if stack:
            stack[-1]["calls"].append(frame)
        stack.append(frame)
        frames.append(frame)
    for log in bundle.logs:
        frame_index = bundle.emitting_frame(log)
        # position = number of direct children of the frame entered up to afterCallIndex
        position = sum(1 for c in bundle.children(frame_index) if c <= log.after_call_index)
        frames[frame_index]["logs"].append({
            "address": log.emitter, "topics": list(log.topics), "data": "0x" + log.data.hex(),
            "position": hex(position),
        })
    for f in frames:
        if not f["calls"]:
            del f["calls"]
        if not f["logs"]:
            del f["logs"]
    receipt = {
        "transactionHash": bundle.tx_hash, "blockNumber": hex(bundle.block_number),
        "transactionIndex": hex(bundle.tx_index), "status": "0x0" if bundle.reverted else "0x1",
        "logs": [{"address": l.emitter, "topics": list(l.topics), "data": "0x" + l.data.hex()}
                 for l in bundle.logs],
    }
    tx = {"hash": bundle.tx_hash, "from": bundle.sender, "blockNumber": hex(bundle.block_number),
          "transactionIndex": hex(bundle.tx_index)}
    return tx, receipt, frames[0]


__all__ = [
    "CapabilityError", "NotFoundError", "RpcClient", "RpcError", "TransportError", "bundle_from_trace",
    "fetch_bundle", "fetch_corpus", "trace_from_bundle",
]
