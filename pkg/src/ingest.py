"""Tick-data ingestion: CSV parsing, price-grid snapping and per-day histograms.

Prices are carried as integer thousandths of a currency unit from the moment
they are parsed, so grid snapping and volume accumulation never see binary
floating-point drift.
"""

import csv
import io
import logging
import os
import re
from collections.abc import Iterable
from dataclasses import dataclass
from datetime import date
from decimal import Decimal, InvalidOperation
from typing import TextIO

import numpy as np

from src.errors import DegenerateDay, DomainError, EmptyInput, IoError, ParseError
from src.models import DailyMetrics, GridMode, TickRecord, VolumeHistogram

log = logging.getLogger(__name__)

TICK_HEADER = ("day", "timestamp", "price", "volume")
HISTOGRAM_HEADER = ("price", "volume", "probability")
METRICS_HEADER = (
    "day",
    "total_volume",
    "total_amount",
    "weighted_mean_price",
    "distinct_price_count",
    "min_price",
    "max_price",
)
_TIMESTAMP_RE = re.compile(r"^(\d{2}):(\d{2}):(\d{2})\.(\d{3})$")


def price_to_milli(price: float | str | Decimal) -> int:
    """Convert a price with at most three fraction digits to integer thousandths."""
    try:
        value = Decimal(str(price).strip())
    except InvalidOperation as e:
        raise DomainError(f"price {price!r} is not a decimal number") from e
    if not value.is_finite() or value <= 0:
        raise DomainError(f"price must be positive, got {price!r}")
    scaled = value * 1000
    if scaled != scaled.to_integral_value():
        raise DomainError(f"price {price!r} has more than 3 decimal places")
    return int(scaled)


def milli_to_price(milli: int) -> float:
    return milli / 1000


def format_price(milli: int) -> str:
    return f"{milli // 1000}.{milli % 1000:03d}"


def snap_milli(milli: int, mode: GridMode) -> int:
    digit = milli % 10
    base = milli - digit
    if mode is GridMode.TWO_DECIMAL:
        return base + 10 if digit >= 5 else base
    # Third-decimal rule: 0-2 down, 3-7 to the half cent, 8-9 up to the next cent.
    if digit <= 2:
        return base
    if digit <= 7:
        return base + 5
    return base + 10


def snap_price(price: float | str | Decimal, mode: GridMode) -> float:
    return milli_to_price(snap_milli(price_to_milli(price), mode))


def _parse_timestamp(text: str, line: int) -> int:
    match = _TIMESTAMP_RE.match(text.strip())
    if not match:
        raise ParseError(line, f"timestamp {text!r} is not HH:MM:SS.mmm")
    hh, mm, ss, ms = (int(g) for g in match.groups())
    if hh > 23 or mm > 59 or ss > 59:
        raise ParseError(line, f"timestamp {text!r} is out of range")
    return ((hh * 60 + mm) * 60 + ss) * 1000 + ms


def _parse_row(row: list[str], line: int) -> TickRecord:
    if len(row) != len(TICK_HEADER):
        raise ParseError(line, f"expected {len(TICK_HEADER)} fields, got {len(row)}")
    day_text, ts_text, price_text, volume_text = (field.strip() for field in row)
    try:
        day_id = date.fromisoformat(day_text)
    except ValueError as e:
        raise ParseError(line, f"day {day_text!r} is not an ISO-8601 date") from e
    timestamp_ms = _parse_timestamp(ts_text, line)
    try:
        price = Decimal(price_text)
    except InvalidOperation as e:
        raise ParseError(line, f"price {price_text!r} is not a decimal number") from e
    if not price.is_finite():
        raise ParseError(line, f"price {price_text!r} is not finite")
    if price <= 0:
        raise DomainError(f"price must be positive, got {price_text}", line=line)
    if -price.as_tuple().exponent > 3:  # type: ignore[operator]
        raise ParseError(line, f"price {price_text!r} has more than 3 fraction digits")
    try:
        volume = int(volume_text)
    except ValueError as e:
        raise ParseError(line, f"volume {volume_text!r} is not an integer") from e
    if volume < 0:
        raise DomainError(f"volume must be non-negative, got {volume}", line=line)
    return TickRecord(day_id=day_id, timestamp_ms=timestamp_ms, price_milli=int(price * 1000), volume=volume)


def parse_ticks(source: str | bytes | TextIO) -> dict[date, list[TickRecord]]:
    """Parse tick CSV text into records grouped by day and sorted by timestamp.

    Raises EmptyInput when there is no header or no data row, ParseError for a
    malformed row and DomainError for a negative volume or non-positive price.
    Both row errors carry the 1-based line number.
    """
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8-sig")
        except UnicodeDecodeError as e:
            raise ParseError(source.count(b"\n", 0, e.start) + 1, f"invalid UTF-8 byte 0x{source[e.start]:02x}") from e
    stream = io.StringIO(source) if isinstance(source, str) else source
    reader = csv.reader(stream)

    header = next(reader, None)
    while header is not None and not any(cell.strip() for cell in header):
        header = next(reader, None)
    if header is None:
        raise EmptyInput("tick input is empty")
    header[0] = header[0].lstrip("\ufeff")
    if tuple(cell.strip().lower() for cell in header) != TICK_HEADER:
        raise ParseError(reader.line_num, f"expected header {','.join(TICK_HEADER)}, got {','.join(header)}")

    days: dict[date, list[TickRecord]] = {}
    for row in reader:
        if not any(cell.strip() for cell in row):
            continue
        record = _parse_row(row, reader.line_num)
        days.setdefault(record.day_id, []).append(record)
    if not days:
        raise EmptyInput("tick input has a header but no rows")

    # sorted() is stable, so equal timestamps keep file order
    return {day: sorted(days[day], key=lambda r: r.timestamp_ms) for day in sorted(days)}


def read_ticks_csv(path: str) -> dict[date, list[TickRecord]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoError(f"cannot read tick file {path}: {e}") from e
    return parse_ticks(data)


def merge_days(groups: Iterable[dict[date, list[TickRecord]]]) -> dict[date, list[TickRecord]]:
    """Merge per-file day groups; a day split across files is concatenated and re-sorted."""
    merged: dict[date, list[TickRecord]] = {}
    for group in groups:
        for day, records in group.items():
            merged.setdefault(day, []).extend(records)
    return {day: sorted(merged[day], key=lambda r: r.timestamp_ms) for day in sorted(merged)}


def format_timestamp(timestamp_ms: int) -> str:
    seconds, ms = divmod(timestamp_ms, 1000)
    minutes, ss = divmod(seconds, 60)
    hh, mm = divmod(minutes, 60)
    return f"{hh:02d}:{mm:02d}:{ss:02d}.{ms:03d}"


def write_ticks_csv(path: str, days: dict[date, list[TickRecord]]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TICK_HEADER)
        for day in sorted(days):
            for r in days[day]:
                writer.writerow([day.isoformat(), format_timestamp(r.timestamp_ms), format_price(r.price_milli), r.volume])


def build_histogram(records: list[TickRecord], mode: GridMode) -> VolumeHistogram:
    """Accumulate one day's volume per snapped grid price and normalise it.

    Zero-volume ticks carry no traded volume and do not open a price bin.
    """
    traded = [r for r in records if r.volume > 0]
    if not traded:
        raise DegenerateDay("day has no traded volume")
    snapped = np.array([snap_milli(r.price_milli, mode) for r in traded], dtype=np.int64)
    volumes = np.array([r.volume for r in traded], dtype=np.int64)
    grid, inverse = np.unique(snapped, return_inverse=True)
    per_price = np.zeros(len(grid), dtype=np.int64)
    np.add.at(per_price, inverse, volumes)
    return VolumeHistogram.from_volumes(
        traded[0].day_id,
        mode,
        tuple(int(m) for m in grid),
        tuple(int(v) for v in per_price),
    )


def day_summary(records: list[TickRecord]) -> DailyMetrics:
    """Daily aggregates from the original (unsnapped) trade prices."""
    if not records:
        raise DegenerateDay("day has no records")
    total_volume = sum(r.volume for r in records)
    if total_volume == 0:
        raise DegenerateDay(f"day {records[0].day_id} has no traded volume")
    amount_milli = sum(r.price_milli * r.volume for r in records)
    traded = {r.price_milli for r in records if r.volume > 0}
    return DailyMetrics(
        day_id=records[0].day_id,
        total_volume=total_volume,
        total_amount=amount_milli / 1000,
        weighted_mean_price=amount_milli / (1000 * total_volume),
        distinct_price_count=len(traded),
        min_price=min(traded) / 1000,
        max_price=max(traded) / 1000,
    )


def write_histogram_csv(path: str, hist: VolumeHistogram) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTOGRAM_HEADER)
        for milli, volume, prob in zip(hist.price_milli, hist.volumes, hist.probabilities, strict=True):
            writer.writerow([format_price(milli), volume, repr(prob)])


def read_histogram_csv(path: str, day_id: date, mode: GridMode) -> VolumeHistogram:
    """Load a histogram export; probabilities are recomputed from the integer volumes."""
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != HISTOGRAM_HEADER:
                raise ParseError(1, f"{path}: expected header {','.join(HISTOGRAM_HEADER)}")
            prices: list[int] = []
            volumes: list[int] = []
            for row in reader:
                if not row:
                    continue
                try:
                    prices.append(price_to_milli(row[0]))
                    volumes.append(int(row[1]))
                except (DomainError, ValueError, IndexError) as e:
                    raise ParseError(reader.line_num, f"{path}: {e}") from e
    except OSError as e:
        raise IoError(f"cannot read histogram file {path}: {e}") from e
    if not prices:
        raise EmptyInput(f"histogram file {path} has no rows")
    return VolumeHistogram.from_volumes(day_id, mode, tuple(prices), tuple(volumes))


def write_metrics_csv(path: str, metrics: list[DailyMetrics]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in sorted(metrics, key=lambda m: m.day_id):
            writer.writerow([
                m.day_id.isoformat(),
                m.total_volume,
                repr(m.total_amount),
                repr(m.weighted_mean_price),
                m.distinct_price_count,
                repr(m.min_price),
                repr(m.max_price),
            ])


def read_metrics_csv(path: str) -> list[DailyMetrics]:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise IoError(f"cannot read daily metrics {path}: {e}") from e
    try:
        return [
            DailyMetrics(
                day_id=date.fromisoformat(row["day"]),
                total_volume=int(row["total_volume"]),
                total_amount=float(row["total_amount"]),
                weighted_mean_price=float(row["weighted_mean_price"]),
                distinct_price_count=int(row["distinct_price_count"]),
                min_price=float(row["min_price"]),
                max_price=float(row["max_price"]),
            )
            for row in rows
        ]
    except (KeyError, ValueError) as e:
        raise ParseError(1, f"{path}: malformed daily metrics ({e})") from e


@dataclass(frozen=True)
class IngestedDay:
    """Both price grids the fit cascade may need, plus the day's aggregates."""

    metrics: DailyMetrics
    coarse: VolumeHistogram
    fine: VolumeHistogram

    @property
    def day_id(self) -> date:
        return self.metrics.day_id


def ingest_days(days: dict[date, list[TickRecord]]) -> list[IngestedDay]:
    """Summarise and bin every day; days without traded volume are logged and dropped."""
    ingested: list[IngestedDay] = []
    for day, records in days.items():
        try:
            ingested.append(
                IngestedDay(
                    metrics=day_summary(records),
                    coarse=build_histogram(records, GridMode.TWO_DECIMAL),
                    fine=build_histogram(records, GridMode.HALF_CENT),
                )
            )
        except DegenerateDay as e:
            log.warning("Skipping %s: %s", day, e)
    log.info("Ingested %d of %d days", len(ingested), len(days))
    return ingested
