"""``txparallax`` command line: sample, fetch, synth, analyze, aggregate, graph.

Exit codes: 0 success, 1 usage error, 2 input error, 3 RPC error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Optional, Sequence

from . import __version__
from .analysis import DEFAULT_CLIQUE_BUDGET, AnalysisOptions, ScheduleMode, analyze_block
from .disentangle import DisentangleConfig, load_config
from .graphs import BatchError, build_address_graph, build_tx_graph, dump_graphs, merge_blocks
from .ingest import SamplePlan, day_ranges, parse_price_csv, parse_trace_file, plan_samples, write_trace_file
from .model import BlockTrace, ConflictMode
from .report import MetricRecord, MetricSeries, Window, emit_report, price_table, read_per_block, write_per_block
from .rpc import RPC_URL_ENV, RpcConfig, RpcError, TraceClient, default_endpoint
from .synth import ANCHOR_BLOCK, PRESETS, generate_blocks, preset

log = logging.getLogger("txparallax")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RPC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _percentiles(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}") from None
    if not values or any(not 0 <= p <= 100 for p in values):
        raise argparse.ArgumentTypeError("percentiles must lie within [0, 100]")
    return values


def parse_block_list(text: str) -> list[int]:
    """``"15000000-15000003,15000010"`` -> sorted distinct block numbers; ``@file`` reads one entry per line."""
    if text.startswith("@"):
        text = ",".join(Path(text[1:]).read_text("utf-8").split())
    out: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            a = int(lo)
            b = int(hi) if sep else a
        except ValueError:
            raise UsageError(f"bad block list entry {part!r}") from None
        if b < a or a < 0:
            raise UsageError(f"bad block range {part!r}")
        out.update(range(a, b + 1))
    if not out:
        raise UsageError("empty block list")
    return sorted(out)


@dataclass(frozen=True)
class RunConfig:
    traces: Optional[Path] = None
    rpc: Optional[str] = None
    block_list: Optional[str] = None
    synth: Optional[str] = None
    blocks: int = 50
    seed: int = 0
    start: int = ANCHOR_BLOCK
    conflict_mode: ConflictMode = ConflictMode.WRITE_AWARE
    disentangle: Optional[str] = None
    batch_size: int = 1
    clique: bool = True
    clique_budget: Optional[float] = DEFAULT_CLIQUE_BUDGET
    schedule_mode: ScheduleMode = ScheduleMode.EARLIEST_START
    window: Window = Window.DAILY
    out: Optional[Path] = None
    out_aggregate: Optional[Path] = None
    format: str = "csv"
    percentiles: tuple[float, ...] = (90, 99)
    workers: Optional[int] = None

    def __post_init__(self) -> None:
        sources = [s for s in (self.traces, self.rpc, self.synth) if s is not None]
        if len(sources) != 1:
            raise UsageError("give exactly one input source: --traces, --rpc or --synth")
        if self.batch_size < 1:
            raise UsageError("--batch-size must be at least 1")
        if self.rpc is not None and not self.block_list:
            raise UsageError("--rpc needs --block-list")
        if self.synth is not None and self.blocks < 1:
            raise UsageError("--blocks must be at least 1")
        if self.workers is not None and self.workers < 1:
            raise UsageError("--workers must be at least 1")


# -- pipeline -----------------------------------------------------------------


def _resolve_disentangle(value: Optional[str]) -> Optional[DisentangleConfig]:
    if value is None or value == "off":
        return None
    return load_config(value)


def load_blocks(cfg: RunConfig) -> list[BlockTrace]:
    if cfg.traces is not None:
        return list(parse_trace_file(cfg.traces))
    if cfg.synth is not None:
        return list(generate_blocks(preset(cfg.synth, seed=cfg.seed), cfg.start, cfg.blocks))
    numbers = parse_block_list(cfg.block_list or "")
    with TraceClient(cfg.rpc or "") as client:
        return list(client.fetch_blocks(numbers))


def _analyze_batch(
    batch: Sequence[BlockTrace], mode: ConflictMode, rewrites: Optional[DisentangleConfig], opts: AnalysisOptions
) -> MetricRecord:
    g = build_tx_graph(batch, mode, rewrites)
    return MetricRecord(batch[0].number, batch[-1].number, batch[0].timestamp, analyze_block(g, opts))


def analyze(cfg: RunConfig, blocks: Sequence[BlockTrace]) -> list[MetricRecord]:
    """One record per block, or per batch of ``cfg.batch_size`` consecutive blocks."""
    rewrites = _resolve_disentangle(cfg.disentangle)
    opts = AnalysisOptions(cfg.clique, cfg.clique_budget, cfg.schedule_mode)
    if cfg.batch_size == 1:
        batches = [[b] for b in blocks]
    else:
        batches = merge_blocks(blocks, cfg.batch_size)
        dropped = len(blocks) - len(batches) * cfg.batch_size
        if dropped:
            log.warning("dropping %d trailing blocks that do not fill a batch of %d", dropped, cfg.batch_size)
    workers = cfg.workers or os.cpu_count() or 1
    workers = min(workers, len(batches)) or 1
    log.info("analyzing %d graph(s) from %d block(s) with %d worker(s)", len(batches), len(blocks), workers)
    n = len(batches)
    args = ([cfg.conflict_mode] * n, [rewrites] * n, [opts] * n)
    records: list[MetricRecord] = []
    if workers == 1:
        results: Iterator[MetricRecord] = map(_analyze_batch, batches, *args)
        records = _collect(results, n)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = _collect(pool.map(_analyze_batch, batches, *args), n)
    inexact = sum(1 for r in records if r.metrics.clique_exact is False)
    if inexact:
        log.warning("clique search hit its budget on %d graph(s); schedule makespan used as upper-bound proxy", inexact)
    return records


def _collect(results: Iterator[MetricRecord], n: int) -> list[MetricRecord]:
    out = []
    step = max(1, n // 10)
    for i, rec in enumerate(results, start=1):
        out.append(rec)
        if i % step == 0 or i == n:
            log.info("analyzed %d/%d", i, n)
    return out


@contextmanager
def _output(path: Optional[Path], binary: bool = False) -> Iterator[IO]:
    if path is None or str(path) == "-":
        yield sys.stdout.buffer if binary else sys.stdout
        return
    if binary:
        with open(path, "wb") as fh:
            yield fh
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def cmd_analyze(cfg: RunConfig) -> int:
    blocks = load_blocks(cfg)
    log.info("loaded %d block(s)", len(blocks))
    records = analyze(cfg, blocks)
    if cfg.out is not None:
        with _output(cfg.out) as fh:
            write_per_block(records, fh)
    report = emit_report(MetricSeries(records, cfg.window), cfg.format, cfg.percentiles)
    if cfg.out_aggregate is not None or cfg.out is None:
        with _output(cfg.out_aggregate, binary=True) as fh:
            fh.write(report)
    return EXIT_OK


# -- argument handling ----------------------------------------------------------


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--conflict-mode", choices=[m.value for m in ConflictMode], default=ConflictMode.WRITE_AWARE.value)
    p.add_argument(
        "--disentangle",
        metavar="PATH|default|off",
        default="off",
        help="disentangler config JSON; 'default' uses the shipped mainnet config",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="txparallax", description="Parallelism bounds for Ethereum-style blocks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="build conflict graphs and compute speedup bounds")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--traces", type=Path, help="canonical trace file (newline-delimited JSON)")
    src.add_argument(
        "--rpc", nargs="?", const="", metavar="URL", help=f"archive node endpoint (default: ${RPC_URL_ENV})"
    )
    src.add_argument("--synth", choices=sorted(PRESETS), metavar="PRESET", help="synthetic preset: " + ", ".join(PRESETS))
    a.add_argument("--block-list", help="blocks to fetch with --rpc, e.g. 15000000-15000009,15000020 or @file")
    a.add_argument("--blocks", type=int, default=50, help="number of synthetic blocks (default 50)")
    a.add_argument("--seed", type=int, default=0, help="synthetic workload seed")
    a.add_argument("--start", type=int, default=ANCHOR_BLOCK, help="first synthetic block number")
    _add_analysis_flags(a)
    a.add_argument("--batch-size", type=int, default=1, metavar="K", help="merge K consecutive blocks per graph")
    a.add_argument("--clique-budget", type=float, default=DEFAULT_CLIQUE_BUDGET, metavar="SECONDS")
    a.add_argument("--no-clique", action="store_true", help="skip the clique search; use the schedule as proxy")
    a.add_argument("--schedule-mode", choices=[m.value for m in ScheduleMode], default=ScheduleMode.EARLIEST_START.value)
    a.add_argument("--window", choices=[w.value for w in Window], default=Window.DAILY.value)
    a.add_argument("--out", type=Path, help="per-block (or per-batch) metrics CSV")
    a.add_argument("--out-aggregate", type=Path, help="aggregate report (default: stdout when --out is not given)")
    a.add_argument("--format", choices=["csv", "json"], default="csv", help="aggregate report format")
    a.add_argument("--percentiles", type=_percentiles, default=(90, 99), help="comma-separated, default 90,99")
    a.add_argument("--workers", type=int, default=None, help="worker processes (default: available processors)")

    s = sub.add_parser("sample", help="draw random blocks per day")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--start-date", type=dt.date.fromisoformat, required=True, metavar="YYYY-MM-DD")
    s.add_argument("--end-date", type=dt.date.fromisoformat, required=True, metavar="YYYY-MM-DD")
    s.add_argument("--per-day", type=int, default=65)
    rng = s.add_mutually_exclusive_group(required=True)
    rng.add_argument("--day-ranges", type=Path, help="CSV with header date,first_block,last_block")
    rng.add_argument("--timestamps", type=Path, help="CSV with header block,timestamp in chain order")
    s.add_argument("--out", type=Path, help="one block number per line (default stdout)")

    f = sub.add_parser("fetch", help="download block traces into a trace file")
    f.add_argument("--rpc", default=None, metavar="URL", help=f"archive node endpoint (default: ${RPC_URL_ENV})")
    f.add_argument("--block-list", required=True)
    f.add_argument("--max-in-flight", type=int, default=8)
    f.add_argument("--trace-method", default="trace_block")
    f.add_argument("--out", type=Path, help="trace file (default stdout)")

    y = sub.add_parser("synth", help="write synthetic blocks as a trace file")
    y.add_argument("--preset", choices=sorted(PRESETS), default="defi")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--start", type=int, default=ANCHOR_BLOCK)
    y.add_argument("--blocks", type=int, default=10)
    y.add_argument("--out", type=Path, help="trace file (default stdout)")

    g = sub.add_parser("aggregate", help="aggregate a per-block metrics CSV")
    g.add_argument("--per-block", type=Path, required=True, help="CSV written by analyze --out")
    g.add_argument("--window", choices=[w.value for w in Window], default=Window.DAILY.value)
    g.add_argument("--format", choices=["csv", "json"], default="csv")
    g.add_argument("--percentiles", type=_percentiles, default=(90, 99))
    g.add_argument("--out", type=Path, help="aggregate report (default stdout)")
    g.add_argument("--prices", type=Path, help="daily price CSV (date,open,high,low,close)")
    g.add_argument("--price-out", type=Path, help="price table CSV (default stderr summary only)")

    d = sub.add_parser("graph", help="dump the address and transaction graphs of one block as JSON")
    d.add_argument("--traces", type=Path, required=True)
    d.add_argument("--block", type=int, required=True)
    _add_analysis_flags(d)
    d.add_argument("--out", type=Path, help="JSON output (default stdout)")
    return parser


def run_config(ns: argparse.Namespace) -> RunConfig:
    rpc = ns.rpc
    if rpc == "":
        rpc = default_endpoint()
        if not rpc:
            raise UsageError(f"--rpc given without URL and ${RPC_URL_ENV} is unset")
    return RunConfig(
        traces=ns.traces,
        rpc=rpc,
        block_list=ns.block_list,
        synth=ns.synth,
        blocks=ns.blocks,
        seed=ns.seed,
        start=ns.start,
        conflict_mode=ConflictMode(ns.conflict_mode),
        disentangle=ns.disentangle,
        batch_size=ns.batch_size,
        clique=not ns.no_clique,
        clique_budget=ns.clique_budget if ns.clique_budget > 0 else None,
        schedule_mode=ScheduleMode(ns.schedule_mode),
        window=Window(ns.window),
        out=ns.out,
        out_aggregate=ns.out_aggregate,
        format=ns.format,
        percentiles=ns.percentiles,
        workers=ns.workers,
    )


def _read_csv(path: Path, header: list[str]) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise ValueError(f"{path}: expected header {','.join(header)}")
    return [r for r in rows[1:] if r]


def cmd_sample(ns: argparse.Namespace) -> int:
    plan = SamplePlan(ns.seed, ns.start_date, ns.end_date, ns.per_day)
    if ns.day_ranges is not None:
        ranges = {
            dt.date.fromisoformat(d): (int(a), int(b))
            for d, a, b in _read_csv(ns.day_ranges, ["date", "first_block", "last_block"])
        }
    else:
        ranges = day_ranges((int(n), int(t)) for n, t in _read_csv(ns.timestamps, ["block", "timestamp"]))
    picked = plan_samples(plan, ranges)
    with _output(ns.out) as fh:
        fh.write("".join(f"{n}\n" for n in picked))
    log.info("sampled %d block(s)", len(picked))
    return EXIT_OK


def cmd_fetch(ns: argparse.Namespace) -> int:
    endpoint = ns.rpc or default_endpoint()
    if not endpoint:
        raise UsageError(f"no endpoint: pass --rpc or set ${RPC_URL_ENV}")
    numbers = parse_block_list(ns.block_list)
    config = RpcConfig(trace_method=ns.trace_method, max_in_flight=ns.max_in_flight)
    with TraceClient(endpoint, config) as client:
        blocks = list(client.fetch_blocks(numbers))
    with _output(ns.out) as fh:
        write_trace_file(blocks, fh)
    log.info("fetched %d block(s)", len(blocks))
    return EXIT_OK


def cmd_synth(ns: argparse.Namespace) -> int:
    if ns.blocks < 1:
        raise UsageError("--blocks must be at least 1")
    with _output(ns.out) as fh:
        write_trace_file(generate_blocks(preset(ns.preset, seed=ns.seed), ns.start, ns.blocks), fh)
    return EXIT_OK


def cmd_aggregate(ns: argparse.Namespace) -> int:
    with open(ns.per_block, newline="", encoding="utf-8") as fh:
        records = read_per_block(fh)
    series = MetricSeries(records, Window(ns.window))
    with _output(ns.out, binary=True) as fh:
        fh.write(emit_report(series, ns.format, ns.percentiles))
    if ns.prices is not None:
        rows, corr = price_table(series, parse_price_csv(ns.prices))
        if ns.price_out is not None:
            with _output(ns.price_out) as fh:
                csv.writer(fh, lineterminator="\n").writerows(rows)
        log.info("pearson(daily mean tx count, close) = %s", "undefined" if corr is None else f"{corr:.6g}")
    return EXIT_OK


def cmd_graph(ns: argparse.Namespace) -> int:
    block = next((b for b in parse_trace_file(ns.traces) if b.number == ns.block), None)
    if block is None:
        raise ValueError(f"block {ns.block} not in {ns.traces}")
    rewrites = _resolve_disentangle(ns.disentangle)
    ag = build_address_graph([block], rewrites)
    tg = build_tx_graph([block], ConflictMode(ns.conflict_mode), rewrites)
    with _output(ns.out) as fh:
        fh.write(dump_graphs(ag, tg) + "\n")
    return EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "fetch": cmd_fetch,
    "synth": cmd_synth,
    "aggregate": cmd_aggregate,
    "graph": cmd_graph,
}


def _configure_logging(level: int) -> None:
    for h in [h for h in log.handlers if getattr(h, "_txparallax", False)]:
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(name)s: %(levelname)s: %(message)s"))
    handler._txparallax = True  # type: ignore[attr-defined]
    log.addHandler(handler)
    log.setLevel(level)
    log.propagate = False


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    _configure_logging(logging.WARNING if ns.quiet else logging.INFO)
    try:
        if ns.command == "analyze":
            return cmd_analyze(run_config(ns))
        return COMMANDS[ns.command](ns)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"txparallax: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RpcError as exc:
        print(f"txparallax: rpc error: {exc}", file=sys.stderr)
        return EXIT_RPC
    except (OSError, ValueError, BatchError, json.JSONDecodeError) as exc:
        print(f"txparallax: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
