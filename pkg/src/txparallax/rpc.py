"""Fetch block traces from an archive node over JSON-RPC.

The default mapping understands Erigon/OpenEthereum flat traces
(``trace_block``), block headers (``eth_getBlockByNumber``) and receipts
(``eth_getBlockReceipts``). Method names are configurable through
:class:`RpcConfig`; a different response layout can be plugged in with
``RpcConfig.mapper``.
"""

from __future__ import annotations

import itertools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Optional

import httpx

from .ingest import MAX_INPUT_BYTES
from .model import BlockTrace, CallFrame, CallKind, Transaction, address

log = logging.getLogger(__name__)

RPC_URL_ENV = "TXPARALLAX_RPC_URL"
METHOD_NOT_FOUND = -32601


class RpcError(Exception):
    pass


class RpcNetworkError(RpcError):
    """The endpoint stayed unreachable (or kept failing transiently) after all retries."""


class BlockNotFound(RpcError):
    pass


class TraceUnsupported(RpcError):
    """The node does not expose the configured trace method."""


class RpcResponseError(RpcError):
    """The node answered with an error or a response we cannot map."""


@dataclass
class RpcConfig:
    trace_method: str = "trace_block"
    block_method: str = "eth_getBlockByNumber"
    receipts_method: str = "eth_getBlockReceipts"
    timeout: float = 30.0
    max_attempts: int = 5
    backoff: float = 0.5
    max_in_flight: int = 8
    mapper: Optional[Callable[[dict, list, list], BlockTrace]] = None
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)


def default_endpoint() -> Optional[str]:
    return os.environ.get(RPC_URL_ENV)


class TraceClient:
    def __init__(self, endpoint: str, config: RpcConfig | None = None, client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.config = config or RpcConfig()
        self._client = client or httpx.Client(timeout=self.config.timeout)
        self._ids = itertools.count(1)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> TraceClient:
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def call(self, method: str, params: list) -> Any:
        """One JSON-RPC request with bounded exponential backoff on transient failures."""
        cfg = self.config
        payload = {"jsonrpc": "2.0", "id": next(self._ids), "method": method, "params": params}
        last: Exception | None = None
        for attempt in range(cfg.max_attempts):
            if attempt:
                cfg.sleep(cfg.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=payload)
            except httpx.TransportError as exc:
                last = exc
                log.debug("%s attempt %d failed: %s", method, attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = RpcResponseError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise RpcResponseError(f"{method}: HTTP {resp.status_code}")
            try:
                body = resp.json()
            except ValueError:
                raise RpcResponseError(f"{method}: response is not JSON") from None
            if "error" in body and body["error"] is not None:
                err = body["error"]
                if err.get("code") == METHOD_NOT_FOUND:
                    raise TraceUnsupported(f"{method} not supported by node: {err.get('message')}")
                raise RpcResponseError(f"{method}: {err.get('message', err)}")
            return body.get("result")
        raise RpcNetworkError(f"{method} failed after {cfg.max_attempts} attempts: {last}")

    def fetch_block_trace(self, block_number: int) -> BlockTrace:
        tag = hex(block_number)
        header = self.call(self.config.block_method, [tag, False])
        if header is None:
            raise BlockNotFound(f"block {block_number} not found")
        traces = self.call(self.config.trace_method, [tag])
        if traces is None:
            raise BlockNotFound(f"no traces for block {block_number}")
        receipts = self.call(self.config.receipts_method, [tag]) or []
        mapper = self.config.mapper or map_erigon_block
        try:
            return mapper(header, traces, receipts)
        except (KeyError, TypeError, ValueError) as exc:
            raise RpcResponseError(f"block {block_number}: cannot map trace response: {exc}") from exc

    def fetch_blocks(self, numbers: Iterable[int]) -> Iterator[BlockTrace]:
        """Fetch many blocks with at most ``max_in_flight`` concurrent requests; yields in input order."""
        numbers = list(numbers)
        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            yield from pool.map(self.fetch_block_trace, numbers)


def fetch_block_trace(endpoint: str, block_number: int, config: RpcConfig | None = None) -> BlockTrace:
    with TraceClient(endpoint, config) as client:
        return client.fetch_block_trace(block_number)


def _int(value: Any) -> int:
    if isinstance(value, int):
        return value
    return int(value, 16) if str(value).startswith("0x") else int(value)


def _input(hexstr: Optional[str]) -> bytes:
    if not hexstr or hexstr == "0x":
        return b""
    return bytes.fromhex(hexstr[2:2 + 2 * MAX_INPUT_BYTES])


def _frame(entry: dict, top_level: bool) -> Optional[CallFrame]:
    kind = entry.get("type")
    action = entry["action"]
    result = entry.get("result") or {}
    gas = _int(result.get("gasUsed", 0))
    if kind == "call":
        data = _input(action.get("input"))
        call_type = action.get("callType", "call")
        value = _int(action.get("value", "0x0"))
        if call_type == "call" and not data and (top_level or value > 0):
            ck = CallKind.TRANSFER
        else:
            ck = CallKind(call_type)
        return CallFrame(ck, address(action["from"]), address(action["to"]), gas, data)
    if kind == "create":
        # failed creations carry no address; scope the creator instead
        created = result.get("address") or action["from"]
        return CallFrame(CallKind.CALL, address(action["from"]), address(created), gas, b"")
    if kind == "suicide":
        return CallFrame(CallKind.TRANSFER, address(action["address"]), address(action["refundAddress"]), 0, b"")
    return None


def _assemble(entries: list[dict]) -> CallFrame:
    """Rebuild the call tree of one transaction from its flat, traceAddress-keyed entries."""
    nodes: dict[tuple, tuple[CallFrame, list]] = {}
    for e in sorted(entries, key=lambda e: e.get("traceAddress", [])):
        frame = _frame(e, not e.get("traceAddress"))
        if frame is not None:
            nodes[tuple(e.get("traceAddress", []))] = (frame, [])
    for path in sorted(nodes, key=len, reverse=True):
        if not path:
            continue
        parent = path[:-1]
        while parent not in nodes and parent:
            parent = parent[:-1]
        nodes[parent][1].append(path)

    def build(path: tuple) -> CallFrame:
        frame, kids = nodes[path]
        children = tuple(build(k) for k in sorted(kids))
        return CallFrame(frame.kind, frame.from_, frame.to, frame.gas_used, frame.input, children)

    if () not in nodes:
        raise ValueError("transaction has no top-level trace")
    return build(())


def map_erigon_block(header: dict, traces: list, receipts: list) -> BlockTrace:
    by_tx: dict[str, list[dict]] = {}
    order: dict[str, int] = {}
    for e in traces:
        h = e.get("transactionHash")
        if h is None:
            continue  # block and uncle rewards
        by_tx.setdefault(h, []).append(e)
        order.setdefault(h, _int(e.get("transactionPosition", len(order))))
    gas_by_hash = {r["transactionHash"]: _int(r["gasUsed"]) for r in receipts}
    txs = []
    for h in sorted(by_tx, key=order.__getitem__):
        root = _assemble(by_tx[h])
        top = next(e for e in by_tx[h] if not e.get("traceAddress"))
        to = top["action"].get("to") if top.get("type") == "call" else None
        if h not in gas_by_hash:
            raise ValueError(f"no receipt for transaction {h}")
        txs.append(
            Transaction(
                hash="0x" + bytes.fromhex(h[2:]).hex(),
                sender=root.from_,
                recipient=address(to) if to else None,
                gas_used=gas_by_hash[h],
                root_call=root,
            )
        )
    return BlockTrace(
        number=_int(header["number"]),
        timestamp=_int(header["timestamp"]),
        gas_used=_int(header["gasUsed"]),
        transactions=tuple(txs),
    )
