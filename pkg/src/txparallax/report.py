"""Descriptive statistics over per-block metrics and the CSV/JSON reports built on them."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import json
import math
import statistics
from dataclasses import dataclass, fields
from typing import IO, Iterable, Optional, Sequence

from .analysis import BlockMetrics
from .ingest import PriceBar

Z_95 = 1.96

METRICS = (
    "tx_count",
    "dependency_count",
    "total_gas",
    "heaviest_cc_gas",
    "heaviest_clique_gas",
    "schedule_sequential_gas",
    "heaviest_tx_gas",
    "speedup_lower",
    "speedup_upper",
    "speedup_loose",
    "relative_error",
)


class Window(enum.Enum):
    DAILY = "daily"
    MONTHLY = "monthly"


def confidence_interval(values: Sequence[float], z: float = Z_95) -> tuple[float, float]:
    """Normal-approximation interval ``mean ± z·s/√n`` (degenerate for a single value)."""
    if not values:
        raise ValueError("confidence interval of an empty sample")
    m = statistics.fmean(values)
    if len(values) == 1:
        return m, m
    half = z * statistics.stdev(values) / math.sqrt(len(values))
    return m - half, m + half


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ``ceil(p/100 · n)``-th smallest value."""
    if not values:
        raise ValueError("percentile of an empty sample")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile must be within [0, 100], got {p}")
    ordered = sorted(values)
    rank = max(1, math.ceil(p / 100 * len(ordered)))
    return ordered[rank - 1]


def pearson(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Product-moment correlation; ``None`` when either series is constant."""
    if len(x) != len(y):
        raise ValueError(f"series lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("correlation needs at least two points")
    try:
        return statistics.correlation(x, y)
    except statistics.StatisticsError:
        return None


def price_movement(bar: PriceBar) -> float:
    """Intraday range relative to the low."""
    return (bar.high - bar.low) / bar.low


@dataclass(frozen=True)
class MetricRecord:
    """Metrics of one block, or of a batch starting at ``block`` and ending at ``last_block``."""

    block: int
    last_block: int
    timestamp: int
    metrics: BlockMetrics


@dataclass
class MetricSeries:
    records: list[MetricRecord]
    window: Window = Window.DAILY

    def __post_init__(self) -> None:
        for a, b in zip(self.records, self.records[1:]):
            if b.timestamp < a.timestamp:
                raise ValueError(f"records out of time order at block {b.block}")


@dataclass(frozen=True)
class AggregateRow:
    window_key: str
    metric: str
    mean: float
    ci_low: float
    ci_high: float
    percentiles: tuple[tuple[float, float], ...]
    count: int


def window_key(timestamp: int, window: Window) -> str:
    day = dt.datetime.fromtimestamp(timestamp, dt.timezone.utc).date()
    return day.isoformat() if window is Window.DAILY else f"{day.year:04d}-{day.month:02d}"


def aggregate(series: MetricSeries, percentiles: Sequence[float] = (90, 99)) -> list[AggregateRow]:
    buckets: dict[str, list[BlockMetrics]] = {}
    for rec in series.records:
        buckets.setdefault(window_key(rec.timestamp, series.window), []).append(rec.metrics)
    rows = []
    for key in sorted(buckets):
        for name in METRICS:
            values = [getattr(m, name) for m in buckets[key]]
            values = [float(v) for v in values if v is not None]
            if not values:
                continue
            lo, hi = confidence_interval(values)
            rows.append(
                AggregateRow(
                    window_key=key,
                    metric=name,
                    mean=statistics.fmean(values),
                    ci_low=lo,
                    ci_high=hi,
                    percentiles=tuple((p, percentile(values, p)) for p in percentiles),
                    count=len(values),
                )
            )
    return rows


def fmt(x: float) -> str:
    return f"{x:.6g}"


def _pct_name(p: float) -> str:
    return f"p{p:g}"


def emit_report(
    series: MetricSeries, format: str = "csv", percentiles: Sequence[float] = (90, 99)
) -> bytes:
    """Aggregate report as CSV or a JSON array, rows ordered by window then metric."""
    rows = aggregate(series, percentiles)
    header = ["window_key", "metric", "mean", "ci_low", "ci_high"] + [_pct_name(p) for p in percentiles] + ["count"]
    if format == "json":
        doc = []
        for r in rows:
            obj = {"window_key": r.window_key, "metric": r.metric}
            for k in ("mean", "ci_low", "ci_high"):
                obj[k] = float(fmt(getattr(r, k)))
            for p, v in r.percentiles:
                obj[_pct_name(p)] = float(fmt(v))
            obj["count"] = r.count
            doc.append(obj)
        return (json.dumps(doc, indent=1) + "\n").encode("utf-8")
    if format != "csv":
        raise ValueError(f"unknown report format {format!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(
            [r.window_key, r.metric, fmt(r.mean), fmt(r.ci_low), fmt(r.ci_high)]
            + [fmt(v) for _, v in r.percentiles]
            + [r.count]
        )
    return buf.getvalue().encode("utf-8")


# -- per-block metrics files --------------------------------------------------

_METRIC_FIELDS = [f.name for f in fields(BlockMetrics)]
PER_BLOCK_HEADER = ["block", "last_block", "timestamp"] + _METRIC_FIELDS


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return fmt(value)
    return str(value)


def write_per_block(records: Iterable[MetricRecord], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(PER_BLOCK_HEADER)
    for rec in records:
        m = rec.metrics
        w.writerow([rec.block, rec.last_block, rec.timestamp] + [_cell(getattr(m, f)) for f in _METRIC_FIELDS])


_FLOAT_FIELDS = {"speedup_lower", "speedup_upper", "speedup_loose", "relative_error"}


def read_per_block(source: IO[str]) -> list[MetricRecord]:
    reader = csv.DictReader(source)
    if reader.fieldnames != PER_BLOCK_HEADER:
        raise ValueError(f"unexpected per-block header: {reader.fieldnames}")
    out = []
    for row in reader:
        kw = {}
        for f in _METRIC_FIELDS:
            raw = row[f]
            if raw == "":
                kw[f] = None
            elif f == "clique_exact":
                kw[f] = raw == "true"
            elif f in _FLOAT_FIELDS:
                kw[f] = float(raw)
            else:
                kw[f] = int(raw)
        out.append(MetricRecord(int(row["block"]), int(row["last_block"]), int(row["timestamp"]), BlockMetrics(**kw)))
    return out


# -- prices -------------------------------------------------------------------


def price_table(series: MetricSeries, bars: Sequence[PriceBar]) -> tuple[list[list[str]], Optional[float]]:
    """Daily close, price movement and mean transaction count, plus their correlation.

    The correlation pairs each day's mean transactions per block with that
    day's close price, over days present in both inputs.
    """
    daily: dict[str, list[int]] = {}
    for rec in series.records:
        daily.setdefault(window_key(rec.timestamp, Window.DAILY), []).append(rec.metrics.tx_count)
    rows = [["date", "open", "close", "price_movement", "mean_tx_count"]]
    xs, ys = [], []
    for bar in bars:
        key = bar.date.isoformat()
        mean_tx = statistics.fmean(daily[key]) if key in daily else None
        rows.append([key, fmt(bar.open), fmt(bar.close), fmt(price_movement(bar)), "" if mean_tx is None else fmt(mean_tx)])
        if mean_tx is not None:
            xs.append(mean_tx)
            ys.append(bar.close)
    corr = pearson(xs, ys) if len(xs) >= 2 else None
    return rows, corr
