"""Daily rate series, period-split correlation study and the stability index."""

import logging
import math
from collections.abc import Sequence
from datetime import date

from src.errors import ConfigError, DomainError, EmptyInput, TooFewDays, TooFewPairs, ZeroVariance
from src.models import (
    ClassifiedFit,
    CorrelationEntry,
    CorrelationReport,
    DailyMetrics,
    DailySeriesPoint,
    ModelKind,
    PeriodSpec,
    RatePoint,
    StageCounts,
)
from src.specfun import t_critical
from src.stats import correlation_significant, pearson_r
from src.wavefit import equilibrium_price

log = logging.getLogger(__name__)

PAIR_NAMES = ("return~intensity", "return~amount", "intensity~amount")
CRISIS_PRESET = "crisis2007"


def daily_series(fits: Sequence[ClassifiedFit], metrics: Sequence[DailyMetrics]) -> list[DailySeriesPoint]:
    """Join fits and aggregates by day; days missing either side are dropped with a warning."""
    by_day = {m.day_id: m for m in metrics}
    points: list[DailySeriesPoint] = []
    for fit in sorted(fits, key=lambda f: f.day_id):
        m = by_day.get(fit.day_id)
        if m is None:
            log.warning("No daily metrics for %s, leaving it out of the series", fit.day_id)
            continue
        points.append(
            DailySeriesPoint(
                day_id=fit.day_id,
                equilibrium_price=equilibrium_price(fit, m),
                total_volume=m.total_volume,
                total_amount=m.total_amount,
                fit_kind=fit.kind,
            )
        )
    missing = len(by_day) - len(points)
    if missing > 0:
        log.warning("%d day(s) have metrics but no fit", missing)
    return points


def _change(prev: float, cur: float, log_scale: bool) -> float:
    return math.log(cur / prev) if log_scale else (cur - prev) / prev


def rate_series(daily: Sequence[DailySeriesPoint], log_returns: bool = False) -> list[RatePoint]:
    """Day-over-day change rates between consecutive entries of the series.

    Adjacency is series order, so calendar gaps between trading days are ignored.
    With ``log_returns`` all three rates are log changes instead of simple ones.
    """
    if len(daily) < 2:
        raise TooFewDays(f"rate series needs at least 2 days, got {len(daily)}")
    for prev, cur in zip(daily, daily[1:], strict=False):
        if cur.day_id <= prev.day_id:
            raise DomainError(f"daily series must be strictly increasing, {cur.day_id} follows {prev.day_id}")
    return [
        RatePoint(
            prev_day=prev.day_id,
            day=cur.day_id,
            mean_return_rate=_change(prev.equilibrium_price, cur.equilibrium_price, log_returns),
            intensity_change_rate=_change(prev.total_volume, cur.total_volume, log_returns),
            amount_change_rate=_change(prev.total_amount, cur.total_amount, log_returns),
        )
        for prev, cur in zip(daily, daily[1:], strict=False)
    ]


def split_periods(
    rates: Sequence[RatePoint], periods: Sequence[PeriodSpec], assignment: str = "later"
) -> dict[str, list[RatePoint]]:
    """Rate points per period, keyed by label in period order; overlapping periods share points."""
    if assignment not in ("later", "earlier"):
        raise ValueError(f"assignment must be 'later' or 'earlier', got {assignment!r}")
    out: dict[str, list[RatePoint]] = {}
    for period in periods:
        out[period.label] = [
            r for r in rates if period.contains(r.day if assignment == "later" else r.prev_day)
        ]
    return out


def _entry(pair: str, x: list[float], y: list[float], alpha: float) -> CorrelationEntry:
    n = len(x)
    try:
        r = pearson_r(x, y)
    except ZeroVariance as e:
        return CorrelationEntry(pair, None, None, None, False, note=str(e))
    if abs(r) >= 1.0:
        return CorrelationEntry(pair, r, math.inf, t_critical(alpha, n - 2), True, note="perfect correlation")
    sig = correlation_significant(r, n, alpha)
    return CorrelationEntry(pair, r, sig.statistic, sig.critical, sig.passed)


def correlation_report(rates: Sequence[RatePoint], alpha: float = 0.05, label: str = "ALL") -> CorrelationReport:
    if len(rates) < 3:
        raise TooFewPairs(f"period {label!r} has {len(rates)} rate points, need at least 3")
    ret = [r.mean_return_rate for r in rates]
    dint = [r.intensity_change_rate for r in rates]
    damt = [r.amount_change_rate for r in rates]
    corr1 = _entry(PAIR_NAMES[0], ret, dint, alpha)
    corr2 = _entry(PAIR_NAMES[1], ret, damt, alpha)
    corr3 = _entry(PAIR_NAMES[2], dint, damt, alpha)
    difference = corr2.r - corr1.r if corr1.r is not None and corr2.r is not None else None
    return CorrelationReport(
        label=label,
        n=len(rates),
        first_day=min(r.day for r in rates),
        last_day=max(r.day for r in rates),
        corr1=corr1,
        corr2=corr2,
        corr3=corr3,
        difference=difference,
    )


def period_reports(
    rates: Sequence[RatePoint], periods: Sequence[PeriodSpec], alpha: float = 0.05, assignment: str = "later"
) -> list[CorrelationReport]:
    """One report per period; periods with fewer than 3 rate points are skipped with a warning."""
    reports = []
    for label, members in split_periods(rates, periods, assignment).items():
        try:
            reports.append(correlation_report(members, alpha, label))
        except TooFewPairs as e:
            log.warning("Skipping period %s: %s", label, e)
    return reports


def _is_single_bessel(fit: ClassifiedFit) -> bool:
    return fit.kind is ModelKind.BESSEL0 and fit.passed


def stability_index(fits: Sequence[ClassifiedFit]) -> float:
    """Share of days that are not a significant single-Bessel fit."""
    if not fits:
        raise EmptyInput("stability index needs at least one classified day")
    abnormal = sum(1 for f in fits if not _is_single_bessel(f))
    return abnormal / len(fits)


def stage_counts(fits: Sequence[ClassifiedFit]) -> StageCounts:
    if not fits:
        raise EmptyInput("stage counts need at least one classified day")
    single = [f for f in fits if _is_single_bessel(f)]
    return StageCounts(
        total=len(fits),
        first_pass=sum(1 for f in single if f.stage == 1),
        refined=sum(1 for f in single if f.stage == 2),
        two_peak=sum(1 for f in fits if f.kind is ModelKind.BESSEL0_TWO_PEAK),
        kummer=sum(1 for f in fits if f.kind is ModelKind.KUMMER1),
        unfit=sum(1 for f in fits if f.kind is ModelKind.UNFIT),
        degenerate=sum(1 for f in fits if f.kind is ModelKind.DEGENERATE),
    )


def crisis_periods() -> list[PeriodSpec]:
    """The 2007-2009 bubble and crash window followed by its five sub-periods."""
    return [
        PeriodSpec("A", date(2007, 4, 2), date(2009, 4, 10)),
        PeriodSpec("B", date(2007, 4, 2), date(2007, 6, 29)),
        PeriodSpec("C", date(2007, 7, 2), date(2007, 10, 30)),
        PeriodSpec("D", date(2007, 11, 1), date(2008, 4, 30)),
        PeriodSpec("E", date(2008, 5, 5), date(2008, 10, 31)),
        PeriodSpec("F", date(2008, 11, 3), date(2009, 4, 10)),
    ]


def load_periods(raw) -> list[PeriodSpec]:
    """Periods from config: the preset name, or a list of {label, start, end} mappings."""
    if raw is None:
        return []
    if isinstance(raw, str):
        if raw == CRISIS_PRESET:
            return crisis_periods()
        raise ConfigError(f"unknown period preset {raw!r} (known: {CRISIS_PRESET})")
    if not isinstance(raw, list):
        raise ConfigError(f"periods must be a preset name or a list, got {type(raw).__name__}")

    periods: list[PeriodSpec] = []
    errors: list[str] = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            errors.append(f"period #{i + 1} must be a mapping with label/start/end")
            continue
        try:
            periods.append(PeriodSpec(str(item.get("label", "")), item.get("start"), item.get("end")))
        except (TypeError, ValueError) as e:
            errors.append(f"period #{i + 1}: {e}")
    labels = [p.label for p in periods]
    duplicates = sorted({label for label in labels if labels.count(label) > 1})
    if duplicates:
        errors.append(f"duplicate period labels: {', '.join(duplicates)}")
    if errors:
        raise ConfigError("Invalid periods:\n" + "\n".join(f"- {e}" for e in errors))
    return periods


def full_range_period(rates: Sequence[RatePoint], label: str = "ALL") -> PeriodSpec:
    if not rates:
        raise TooFewDays("no rate points to span")
    return PeriodSpec(label, min(r.prev_day for r in rates), max(r.day for r in rates))
