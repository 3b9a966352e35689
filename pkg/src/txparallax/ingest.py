"""Trace files, block sampling and price data.

Trace files are newline-delimited JSON, one block per line, in the canonical
layout produced by :func:`emit_block`::

    {"number":N,"timestamp":T,"gasUsed":G,"txs":[{"hash":..,"from":..,"to":..,
     "gasUsed":g,"calls":[{"kind":..,"from":..,"to":..,"gasUsed":g,"input":"0x..","calls":[..]}]}]}
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Union

from .model import BlockTrace, CallFrame, CallKind, TraceError, Transaction, address

MAX_INPUT_BYTES = 100  # selector + three 32-byte words

Source = Union[str, Path, IO[bytes], IO[str], Iterable[bytes], Iterable[str]]


class TraceFormatError(ValueError):
    """A trace file line could not be decoded."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _hex_bytes(value: str, what: str) -> bytes:
    if not isinstance(value, str) or not value.startswith("0x"):
        raise TraceError(f"{what} must be a 0x-prefixed hex string")
    try:
        return bytes.fromhex(value[2:])
    except ValueError:
        raise TraceError(f"{what} is not valid hex: {value[:20]}") from None


def _tx_hash(value: str) -> str:
    raw = _hex_bytes(value, "hash")
    if len(raw) != 32:
        raise TraceError(f"transaction hash must be 32 bytes: {value}")
    return "0x" + raw.hex()


def frame_from_json(obj: Mapping) -> CallFrame:
    try:
        kind = CallKind(obj["kind"])
    except ValueError:
        raise TraceError(f"unknown call kind {obj['kind']!r}") from None
    return CallFrame(
        kind=kind,
        from_=address(obj["from"]),
        to=address(obj["to"]),
        gas_used=int(obj["gasUsed"]),
        input=_hex_bytes(obj.get("input", "0x"), "input")[:MAX_INPUT_BYTES],
        children=tuple(frame_from_json(c) for c in obj.get("calls", ())),
    )


def block_from_json(obj: Mapping) -> BlockTrace:
    number = obj["number"]
    txs = []
    for pos, t in enumerate(obj["txs"]):
        calls = t["calls"]
        if len(calls) != 1:
            raise TraceError(f"block {number} tx {pos}: expected exactly one root call, got {len(calls)}")
        try:
            txs.append(
                Transaction(
                    hash=_tx_hash(t["hash"]),
                    sender=address(t["from"]),
                    recipient=address(t["to"]) if t["to"] is not None else None,
                    gas_used=int(t["gasUsed"]),
                    root_call=frame_from_json(calls[0]),
                )
            )
        except TraceError as exc:
            raise TraceError(f"block {number} tx {pos}: {exc}") from None
    return BlockTrace(
        number=int(number),
        timestamp=int(obj["timestamp"]),
        gas_used=int(obj["gasUsed"]),
        transactions=tuple(txs),
    )


def frame_to_json(frame: CallFrame) -> dict:
    return {
        "kind": frame.kind.value,
        "from": frame.from_,
        "to": frame.to,
        "gasUsed": frame.gas_used,
        "input": "0x" + frame.input.hex(),
        "calls": [frame_to_json(c) for c in frame.children],
    }


def block_to_json(block: BlockTrace) -> dict:
    return {
        "number": block.number,
        "timestamp": block.timestamp,
        "gasUsed": block.gas_used,
        "txs": [
            {
                "hash": tx.hash,
                "from": tx.sender,
                "to": tx.recipient,
                "gasUsed": tx.gas_used,
                "calls": [frame_to_json(tx.root_call)],
            }
            for tx in block.transactions
        ],
    }


def emit_block(block: BlockTrace) -> str:
    """Canonical single-line JSON for ``block`` (no trailing newline)."""
    return json.dumps(block_to_json(block), separators=(",", ":"))


def _lines(source: Source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            for raw in fh:
                yield raw.decode("utf-8")
        return
    for raw in source:
        yield raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw


def parse_trace_file(source: Source) -> Iterator[BlockTrace]:
    """Yield blocks from a trace file, validating every record.

    Blank lines (including a trailing newline) are skipped. Block numbers must
    strictly increase.
    """
    previous = None
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"malformed JSON: {exc.msg}", lineno) from None
        try:
            block = block_from_json(obj)
        except (KeyError, TypeError) as exc:
            raise TraceFormatError(f"missing or mistyped field {exc}", lineno) from None
        except TraceError as exc:
            raise TraceFormatError(str(exc), lineno) from None
        if previous is not None and block.number <= previous:
            raise TraceFormatError(
                f"block {block.number}: numbers must strictly increase (previous {previous})", lineno
            )
        previous = block.number
        yield block


def write_trace_file(blocks: Iterable[BlockTrace], out: Union[str, Path, IO[str]]) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            write_trace_file(blocks, fh)
        return
    for block in blocks:
        out.write(emit_block(block))
        out.write("\n")


def dumps_trace_file(blocks: Iterable[BlockTrace]) -> str:
    buf = io.StringIO()
    write_trace_file(blocks, buf)
    return buf.getvalue()


# -- sampling -----------------------------------------------------------------


@dataclass(frozen=True)
class SamplePlan:
    seed: int
    start: dt.date
    end: dt.date  # inclusive
    per_day: int = 65

    def __post_init__(self) -> None:
        if self.per_day < 1:
            raise ValueError("per_day must be at least 1")
        if self.end < self.start:
            raise ValueError("sample range ends before it starts")

    def days(self) -> Iterator[dt.date]:
        day = self.start
        while day <= self.end:
            yield day
            day += dt.timedelta(days=1)


def day_rng(seed: int, day: dt.date) -> random.Random:
    # str seeds are hashed with sha512, so this is stable across processes
    return random.Random(f"{seed}:{day.isoformat()}")


def plan_samples(plan: SamplePlan, day_to_block_range: Mapping[dt.date, tuple[int, int]]) -> list[int]:
    """Pick ``plan.per_day`` distinct blocks from each day's inclusive block range.

    The draw is a partial Fisher-Yates shuffle of the day's range driven by
    :func:`day_rng`; days with fewer blocks contribute all of them.
    """
    picked: list[int] = []
    for day in plan.days():
        if day not in day_to_block_range:
            raise ValueError(f"no block range for {day.isoformat()}")
        first, last = day_to_block_range[day]
        if last < first:
            raise ValueError(f"empty block range for {day.isoformat()}")
        n = last - first + 1
        k = min(plan.per_day, n)
        rng = day_rng(plan.seed, day)
        swapped: dict[int, int] = {}
        for i in range(k):
            j = rng.randrange(i, n)
            vi, vj = swapped.get(i, i), swapped.get(j, j)
            swapped[i], swapped[j] = vj, vi
            picked.append(first + vj)
    return sorted(picked)


def day_ranges(stamps: Iterable[tuple[int, int]]) -> dict[dt.date, tuple[int, int]]:
    """UTC day -> (first, last) block number from ``(number, timestamp)`` pairs in chain order."""
    ranges: dict[dt.date, tuple[int, int]] = {}
    for number, ts in stamps:
        day = dt.datetime.fromtimestamp(ts, dt.timezone.utc).date()
        if day in ranges:
            first, last = ranges[day]
            ranges[day] = (min(first, number), max(last, number))
        else:
            ranges[day] = (number, number)
    return ranges


# -- prices -------------------------------------------------------------------

PRICE_HEADER = ["date", "open", "high", "low", "close"]


@dataclass(frozen=True)
class PriceBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float

    def __post_init__(self) -> None:
        if self.low <= 0:
            raise ValueError(f"{self.date}: prices must be positive")
        if not (self.low <= min(self.open, self.close) and max(self.open, self.close) <= self.high):
            raise ValueError(f"{self.date}: inconsistent open/high/low/close")


def parse_price_csv(source: Source) -> list[PriceBar]:
    reader = csv.reader(line.rstrip("\r\n") for line in _lines(source))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != PRICE_HEADER:
        raise ValueError(f"price CSV header must be {','.join(PRICE_HEADER)}, got {header}")
    bars = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            day, o, h, lo, c = row
            bars.append(PriceBar(dt.date.fromisoformat(day), float(o), float(h), float(lo), float(c)))
        except ValueError as exc:
            raise ValueError(f"price CSV row {row_no}: {exc}") from None
    return bars
