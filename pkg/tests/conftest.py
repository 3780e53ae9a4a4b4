from datetime import date

import numpy as np
import pytest

from src.ingest import price_to_milli
from src.models import (
    BesselParams,
    ClassifiedFit,
    DailyMetrics,
    DailySeriesPoint,
    GridMode,
    ModelKind,
    RatePoint,
    TickRecord,
    VolumeHistogram,
)
from src.wavefit import FitData, model_bessel0

DAY = date(2007, 4, 2)

TICKS_CSV = """day,timestamp,price,volume
2007-04-02,09:30:00.000,3.501,1000
2007-04-02,09:30:01.500,3.504,500
2007-04-02,09:31:00.000,3.497,2000
2007-04-02,09:32:10.250,3.513,300
2007-04-02,09:33:00.000,3.488,700
2007-04-03,09:30:00.000,3.521,800
2007-04-03,09:30:05.000,3.530,1200
2007-04-03,09:31:00.000,3.515,400
2007-04-03,09:35:00.000,3.540,100
"""


def make_tick(price="3.500", volume=100, day=DAY, timestamp_ms=34_200_000) -> TickRecord:
    """Factory for TickRecord instances from a decimal price string."""
    return TickRecord(day_id=day, timestamp_ms=timestamp_ms, price_milli=price_to_milli(price), volume=volume)


def make_ticks(trades, day=DAY) -> list[TickRecord]:
    """One tick per (price, volume) pair, one second apart."""
    return [make_tick(price, volume, day, 34_200_000 + 1000 * i) for i, (price, volume) in enumerate(trades)]


def make_histogram(prices, volumes, mode=GridMode.TWO_DECIMAL, day=DAY) -> VolumeHistogram:
    """Histogram from decimal price strings and integer volumes."""
    return VolumeHistogram.from_volumes(day, mode, tuple(price_to_milli(p) for p in prices), tuple(volumes))


def bessel_data(params: BesselParams, lo=3.30, hi=3.70, tick=0.01) -> FitData:
    """Exact Bessel0 values on a price grid, as solver input."""
    n = round((hi - lo) / tick) + 1
    prices = np.round(lo + tick * np.arange(n), 3)
    return FitData(prices=prices, observed=np.asarray(model_bessel0(prices, params)), tick=tick)


def make_fit(kind=ModelKind.BESSEL0, passed=True, stage=1, day=DAY, params=None) -> ClassifiedFit:
    """Factory for ClassifiedFit records as the cascade would emit them."""
    if kind is ModelKind.DEGENERATE:
        return ClassifiedFit(day, kind, None, None, None, None, None, False)
    return ClassifiedFit(
        day_id=day,
        kind=kind,
        params=params if passed else None,
        r_squared=0.95 if passed else 0.05,
        f_stat=None,
        r2_crit=0.1,
        r2_threshold=0.1,
        passed=passed,
        stage=stage if passed else None,
        grid_mode=GridMode.TWO_DECIMAL,
    )


def make_metrics(day=DAY, total_volume=1000, total_amount=3500.0, weighted_mean_price=3.5) -> DailyMetrics:
    return DailyMetrics(
        day_id=day,
        total_volume=total_volume,
        total_amount=total_amount,
        weighted_mean_price=weighted_mean_price,
        distinct_price_count=10,
        min_price=3.4,
        max_price=3.6,
    )


def make_series(prices, volumes, amounts=None, start=DAY) -> list[DailySeriesPoint]:
    """Consecutive-calendar-day series; amounts default to price * volume."""
    amounts = amounts or [p * v for p, v in zip(prices, volumes, strict=True)]
    return [
        DailySeriesPoint(
            day_id=date.fromordinal(start.toordinal() + i),
            equilibrium_price=p,
            total_volume=v,
            total_amount=a,
            fit_kind=ModelKind.BESSEL0,
        )
        for i, (p, v, a) in enumerate(zip(prices, volumes, amounts, strict=True))
    ]


def make_rates(ret, dint, damt=None, start=DAY) -> list[RatePoint]:
    damt = damt if damt is not None else dint
    return [
        RatePoint(
            prev_day=date.fromordinal(start.toordinal() + i),
            day=date.fromordinal(start.toordinal() + i + 1),
            mean_return_rate=float(r),
            intensity_change_rate=float(v),
            amount_change_rate=float(a),
        )
        for i, (r, v, a) in enumerate(zip(ret, dint, damt, strict=True))
    ]


@pytest.fixture
def ticks_csv(tmp_path):
    """Path to a two-day tick CSV."""
    path = tmp_path / "ticks.csv"
    path.write_text(TICKS_CSV)
    return str(path)
