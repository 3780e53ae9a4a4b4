"""Synthetic tick data drawn from the distribution models.

Days are sampled from the model normalised over a price grid; corpora add a
random-walk equilibrium price and a daily volume path whose change is
correlated with the day's return by a planted rho. All draws come from numpy's
PCG64 generator seeded through ``SeedSequence`` (see docs/synthetic-data.md).
"""

import json
import logging
import math
import os
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from src.errors import DomainError
from src.ingest import snap_milli
from src.models import (
    BesselParams,
    GridMode,
    KummerParams,
    ModelKind,
    Params,
    SynthCorpusSpec,
    SynthDaySpec,
    TickRecord,
    TwoPeakParams,
    VolumeHistogram,
    params_to_dict,
)
from src.wavefit import evaluate

log = logging.getLogger(__name__)

SESSION_OPEN_MS = 9 * 3_600_000 + 30 * 60_000
SESSION_CLOSE_MS = 15 * 3_600_000
MIN_VOLUME_FACTOR = 0.1


def _grid_mode(tick: float) -> GridMode:
    return GridMode.HALF_CENT if math.isclose(tick, 0.005) else GridMode.TWO_DECIMAL


def price_grid(min_price: float, max_price: float, tick: float) -> np.ndarray:
    """Grid prices in integer thousandths covering [min_price, max_price]."""
    step = _grid_mode(tick).step_milli
    lo = math.ceil(round(min_price * 1000) / step) * step
    hi = math.floor(round(max_price * 1000) / step) * step
    if hi < lo:
        raise DomainError(f"grid {min_price}..{max_price} holds no {tick} tick")
    return np.arange(lo, hi + step, step, dtype=np.int64)


def model_distribution(spec: SynthDaySpec) -> tuple[np.ndarray, np.ndarray]:
    """Grid prices (thousandths) and the model normalised to a probability mass on them."""
    grid = price_grid(spec.min_price, spec.max_price, spec.tick)
    density = np.asarray(evaluate(spec.kind, grid / 1000, spec.params), dtype=float)
    mass = float(density.sum())
    if not (mass > 0 and math.isfinite(mass)):
        raise DomainError(f"{spec.kind.value} model has no mass on the grid {spec.min_price}..{spec.max_price}")
    return grid, density / mass


def _draw(spec: SynthDaySpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    grid, probs = model_distribution(spec)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    idx = np.minimum(np.searchsorted(cdf, rng.random(spec.trade_count), side="right"), len(grid) - 1)
    if spec.trade_size_rule == "geometric":
        sizes = rng.geometric(1.0 / spec.mean_trade_size, spec.trade_count).astype(np.int64)
    else:
        sizes = np.full(spec.trade_count, spec.mean_trade_size, dtype=np.int64)
    return grid[idx], sizes


def sample_day(spec: SynthDaySpec) -> list[TickRecord]:
    """Draw ``trade_count`` trades by inverse-CDF sampling; deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    prices, sizes = _draw(spec, rng)
    stamps = np.sort(rng.integers(SESSION_OPEN_MS, SESSION_CLOSE_MS, spec.trade_count))
    return [
        TickRecord(day_id=spec.day_id, timestamp_ms=int(t), price_milli=int(p), volume=int(v))
        for t, p, v in zip(stamps, prices, sizes, strict=True)
    ]


def sample_histogram(spec: SynthDaySpec, mode: GridMode | None = None) -> VolumeHistogram:
    """The histogram ``build_histogram(sample_day(spec), mode)`` would produce, without materialising ticks."""
    mode = mode or _grid_mode(spec.tick)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    prices, sizes = _draw(spec, rng)
    traded, inverse = np.unique(prices, return_inverse=True)
    snapped = np.array([snap_milli(int(m), mode) for m in traded], dtype=np.int64)[inverse]
    grid, bins = np.unique(snapped, return_inverse=True)
    volumes = np.zeros(len(grid), dtype=np.int64)
    np.add.at(volumes, bins, sizes)
    return VolumeHistogram.from_volumes(spec.day_id, mode, tuple(int(m) for m in grid), tuple(int(v) for v in volumes))


def total_variation(hist: VolumeHistogram, spec: SynthDaySpec) -> float:
    """Total-variation distance between a histogram and the normalised model on the same grid."""
    grid, probs = model_distribution(spec)
    observed = dict(zip(hist.price_milli, hist.probabilities, strict=True))
    on_grid = set(grid.tolist())
    emp = np.array([observed.get(int(m), 0.0) for m in grid])
    off_grid = sum(p for m, p in observed.items() if m not in on_grid)
    return 0.5 * (float(np.abs(emp - probs).sum()) + off_grid)


# --- corpora ------------------------------------------------------------------


@dataclass(frozen=True)
class SynthDay:
    spec: SynthDaySpec
    ticks: list[TickRecord]
    true_return: float | None = None
    volume_shock: float | None = None

    @property
    def day_id(self) -> date:
        return self.spec.day_id

    @property
    def total_volume(self) -> int:
        return sum(t.volume for t in self.ticks)


@dataclass(frozen=True)
class SynthCorpus:
    spec: SynthCorpusSpec
    days: list[SynthDay]

    def ticks_by_day(self) -> dict[date, list[TickRecord]]:
        return {d.day_id: d.ticks for d in self.days}

    def returns(self) -> list[float]:
        return [d.true_return for d in self.days if d.true_return is not None]

    def volume_shocks(self) -> list[float]:
        return [d.volume_shock for d in self.days if d.volume_shock is not None]


def business_days(start: date, count: int) -> list[date]:
    days: list[date] = []
    day = start
    while len(days) < count:
        if day.weekday() < 5:
            days.append(day)
        day += timedelta(days=1)
    return days


def _child_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _bessel_day(spec: SynthCorpusSpec, p0: float, trade_count: int, day_id: date, seed: int) -> SynthDaySpec:
    lo, hi = p0 - spec.half_width, p0 + spec.half_width
    grid = price_grid(lo, hi, spec.tick) / 1000
    shape = BesselParams(1.0, spec.omega, p0)
    mass = float(np.sum(evaluate(ModelKind.BESSEL0, grid, shape)))
    return SynthDaySpec(
        kind=ModelKind.BESSEL0,
        params=BesselParams(1.0 / mass, spec.omega, p0),
        min_price=lo,
        max_price=hi,
        tick=spec.tick,
        trade_count=trade_count,
        mean_trade_size=spec.mean_trade_size,
        trade_size_rule=spec.trade_size_rule,
        seed=seed,
        day_id=day_id,
    )


def synth_corpus(spec: SynthCorpusSpec) -> SynthCorpus:
    """Labelled single-Bessel days with a planted return / volume-change correlation.

    Day t draws a return r_t and a shock u_t = rho * r_t / sigma + sqrt(1 - rho^2) * e_t.
    The volume target moves by volume_change_scale * u_t plus a weak pull back
    towards base_volume, and the day's trade count is the target over the mean
    trade size. The equilibrium price follows p0_t = p0_{t-1} * (1 + r_t); a
    return that would push the price grid below zero is reflected.
    """
    root = np.random.SeedSequence(spec.seed)
    path_seq, *day_seqs = root.spawn(spec.day_count + 1)
    rng = np.random.default_rng(path_seq)
    if spec.step_distribution == "laplace":
        steps = rng.laplace(0.0, spec.return_sigma / math.sqrt(2.0), spec.day_count)
    else:
        steps = rng.normal(0.0, spec.return_sigma, spec.day_count)
    noise = rng.normal(0.0, 1.0, spec.day_count)

    floor = 2.0 * spec.half_width + spec.tick
    p0 = spec.start_price
    target = float(spec.base_volume)
    days: list[SynthDay] = []
    for i, day_id in enumerate(business_days(spec.start_date, spec.day_count)):
        ret: float | None = None
        shock: float | None = None
        if i > 0:
            ret = float(steps[i])
            if p0 * (1.0 + ret) < floor:
                ret = -ret
            shock = spec.rho * ret / spec.return_sigma + math.sqrt(1.0 - spec.rho**2) * float(noise[i])
            change = spec.volume_change_scale * shock + spec.volume_reversion * math.log(spec.base_volume / target)
            target = max(target * (1.0 + change), target * MIN_VOLUME_FACTOR)
            p0 = p0 * (1.0 + ret)
        trade_count = max(1, round(target / spec.mean_trade_size))
        day_spec = _bessel_day(spec, p0, trade_count, day_id, _child_seed(day_seqs[i]))
        days.append(SynthDay(day_spec, sample_day(day_spec), ret, shock))
    log.info("Generated %d synthetic days (rho=%.3f, seed=%d)", len(days), spec.rho, spec.seed)
    return SynthCorpus(spec, days)


def random_day_spec(
    kind: ModelKind,
    rng: np.random.Generator,
    day_id: date,
    trade_count: int = 200_000,
    centre: float = 3.5,
    half_width: float = 0.2,
    tick: float = 0.01,
) -> SynthDaySpec:
    """A day whose shape is clearly of the given kind on a centre +/- half_width grid."""
    params: Params
    if kind is ModelKind.BESSEL0:
        params = BesselParams(1.0, float(rng.uniform(50.0, 90.0)), centre + float(rng.uniform(-0.5, 0.5)) * tick)
    elif kind is ModelKind.BESSEL0_TWO_PEAK:
        gap = int(rng.integers(10, 15)) * tick
        left = BesselParams(1.0, float(rng.uniform(60.0, 90.0)), centre - gap / 2)
        right = BesselParams(float(rng.uniform(0.75, 1.0)), float(rng.uniform(60.0, 90.0)), centre + gap / 2)
        params = TwoPeakParams(left, right)
    elif kind is ModelKind.KUMMER1:
        params = KummerParams(1.0, float(rng.uniform(18.0, 26.0)), centre + float(rng.uniform(-0.5, 0.5)) * tick)
    else:
        raise ValueError(f"cannot synthesise a {kind.value} day")
    return SynthDaySpec(
        kind=kind,
        params=params,
        min_price=centre - half_width,
        max_price=centre + half_width,
        tick=tick,
        trade_count=trade_count,
        seed=int(rng.integers(0, 2**63 - 1)),
        day_id=day_id,
    )


def synth_labelled_days(
    kinds: list[ModelKind], per_kind: int, trade_count: int = 200_000, seed: int = 0, start: date = date(2007, 4, 2)
) -> list[SynthDaySpec]:
    """``per_kind`` day specs for each kind, interleaved across consecutive business days."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ids = business_days(start, per_kind * len(kinds))
    return [
        random_day_spec(kinds[i % len(kinds)], rng, day_id, trade_count) for i, day_id in enumerate(ids)
    ]


def truth_dict(corpus: SynthCorpus) -> dict:
    spec = corpus.spec
    return {
        "seed": spec.seed,
        "rho": spec.rho,
        "return_sigma": spec.return_sigma,
        "step_distribution": spec.step_distribution,
        "generator": "numpy PCG64 via SeedSequence.spawn",
        "days": [
            {
                "day": d.day_id.isoformat(),
                "kind": d.spec.kind.value,
                "params": params_to_dict(d.spec.params),
                "trade_count": d.spec.trade_count,
                "total_volume": d.total_volume,
                "return": d.true_return,
                "volume_shock": d.volume_shock,
            }
            for d in corpus.days
        ],
    }


def write_truth_json(path: str, corpus: SynthCorpus) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(truth_dict(corpus), f, indent=2, sort_keys=True)
        f.write("\n")
