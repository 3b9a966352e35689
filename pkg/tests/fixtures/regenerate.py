"""Rebuild the files in this directory.

    python3 tests/fixtures/regenerate.py

Everything is derived from fixed seeds, so running it again reproduces the
committed bytes.
"""

from __future__ import annotations

import datetime as dt
import random
from pathlib import Path

from txparallax.disentangle import SEL_TRANSFER, default_addresses
from txparallax.ingest import SamplePlan, day_ranges, plan_samples, write_trace_file
from txparallax.model import BlockTrace, CallFrame, CallKind, Transaction
from txparallax.synth import block_time, generate_block, generate_blocks, preset

HERE = Path(__file__).resolve().parent

# golden fixture: 65 sampled blocks on each of two days
GOLDEN_SEED = 2022
GOLDEN_DAYS = (dt.date(2022, 6, 14), dt.date(2022, 6, 15))


def addr(n: int) -> str:
    return "0x" + f"{n:040x}"


def tx_hash(block: int, pos: int) -> str:
    return "0x" + f"{block:032x}{pos:032x}"


def call(kind: CallKind, src: str, dst: str, gas: int, data: bytes = b"", *kids: CallFrame) -> CallFrame:
    return CallFrame(kind, src, dst, gas, data, tuple(kids))


def block(number: int, roots: list[tuple[CallFrame, int]]) -> BlockTrace:
    txs = tuple(
        Transaction(tx_hash(number, i), root.from_, root.to, gas, root) for i, (root, gas) in enumerate(roots)
    )
    return BlockTrace(number, block_time(number), sum(t.gas_used for t in txs), txs)


def word(value: int | str) -> bytes:
    return (int(value, 16) if isinstance(value, str) else value).to_bytes(32, "big")


def five_tx() -> BlockTrace:
    """tx1 E->C, tx2 B->C, tx3 D->C->A->B, tx4 F->D (plain transfer), tx5 G->H."""
    A, B, C, D, E, F, G, H = (addr(0xA0 + i) for i in range(8))
    C_ = CallKind.CALL
    return block(
        100,
        [
            (call(C_, E, C, 30_000), 50_000),
            (call(C_, B, C, 25_000), 40_000),
            (call(C_, D, C, 90_000, b"", call(C_, C, A, 40_000, b"", call(C_, A, B, 10_000))), 120_000),
            (call(CallKind.TRANSFER, F, D, 0), 21_000),
            (call(C_, G, H, 9_000), 30_000),
        ],
    )


def dai_transfers(pairs: list[tuple[int, int]], number: int) -> BlockTrace:
    dai = default_addresses()[0][3]
    roots = []
    for src, dst in pairs:
        data = SEL_TRANSFER + word(addr(dst)) + word(10**18)
        roots.append((call(CallKind.CALL, addr(src), dai, 30_000, data), 51_000))
    return block(number, roots)


def round_trip() -> list[BlockTrace]:
    """Three blocks covering every call kind, an empty block and a contract creation."""
    A, B, C, D = (addr(0xB0 + i) for i in range(4))
    first = generate_block(preset("defi", seed=3, tx_count=4, tx_count_spread=0), 15_100_000)
    empty = BlockTrace(15_100_001, block_time(15_100_001), 0, ())
    kinds = block(
        15_100_002,
        [
            (
                call(
                    CallKind.CALL, A, B, 50_000, bytes.fromhex("deadbeef") + word(7),
                    call(CallKind.DELEGATECALL, B, C, 10_000, bytes.fromhex("01")),
                    call(CallKind.STATICCALL, B, D, 2_000),
                    call(CallKind.CALLCODE, B, C, 1_000),
                    call(CallKind.TRANSFER, B, A, 0),
                ),
                70_000,
            ),
        ],
    )
    creation = Transaction(tx_hash(15_100_002, 1), D, None, 90_000, call(CallKind.CALL, D, addr(0xBEEF), 60_000))
    kinds = BlockTrace(kinds.number, kinds.timestamp, kinds.gas_used + 90_000, kinds.transactions + (creation,))
    return [first, empty, kinds]


def golden() -> list[BlockTrace]:
    profile = preset("defi", seed=GOLDEN_SEED, tx_count=8, tx_count_spread=3)
    lo = 15_000_000 + (int(dt.datetime(2022, 6, 14, tzinfo=dt.timezone.utc).timestamp()) - block_time(15_000_000)) // 12 - 10
    hi = lo + 2 * 7200 + 20
    ranges = day_ranges((n, block_time(n)) for n in range(lo, hi + 1))
    numbers = plan_samples(SamplePlan(GOLDEN_SEED, GOLDEN_DAYS[0], GOLDEN_DAYS[-1]), ranges)
    return [generate_block(profile, n) for n in numbers]


def prices() -> str:
    rng = random.Random(7)
    lines = ["date,open,high,low,close"]
    day, price = dt.date(2022, 6, 1), 1900.0
    while day <= dt.date(2022, 8, 31):
        o = price
        c = max(50.0, o * (1 + rng.gauss(0, 0.04)))
        h = max(o, c) * (1 + abs(rng.gauss(0, 0.02)))
        lo = min(o, c) * (1 - abs(rng.gauss(0, 0.02)))
        lines.append(f"{day.isoformat()},{o:.2f},{h:.2f},{lo:.2f},{c:.2f}")
        # next open equals this close, rounded as written
        price = float(f"{c:.2f}")
        day += dt.timedelta(days=1)
    return "\n".join(lines) + "\n"


def main() -> None:
    write_trace_file([five_tx()], HERE / "five_tx.jsonl")
    write_trace_file([dai_transfers([(0xA1, 0xD1), (0xA2, 0xE1), (0xA3, 0xF1)], 200)], HERE / "three_dai.jsonl")
    write_trace_file([dai_transfers([(0xA1, 0xD1), (0xA2, 0xD1), (0xA3, 0xF1)], 201)], HERE / "three_dai_shared.jsonl")
    write_trace_file(generate_blocks(preset("defi", seed=11, tx_count=60, tx_count_spread=10), 15_200_000, 6), HERE / "defi.jsonl")
    write_trace_file(round_trip(), HERE / "round_trip.jsonl")
    write_trace_file(golden(), HERE / "golden_130.jsonl")
    (HERE / "prices_2022q3.csv").write_text(prices(), encoding="utf-8")


if __name__ == "__main__":
    main()
