from dataclasses import dataclass, field
from datetime import date
from enum import Enum

from src.errors import DomainError


class GridMode(Enum):
    TWO_DECIMAL = "2dp"
    HALF_CENT = "halfcent"

    @property
    def step_milli(self) -> int:
        return 10 if self is GridMode.TWO_DECIMAL else 5

    @property
    def tick(self) -> float:
        return self.step_milli / 1000

    @classmethod
    def from_flag(cls, flag: str) -> "GridMode":
        for mode in cls:
            if mode.value == flag:
                return mode
        raise ValueError(f"unknown grid mode {flag!r} (expected '2dp' or 'halfcent')")


@dataclass(frozen=True, slots=True)
class TickRecord:
    day_id: date
    timestamp_ms: int
    price_milli: int  # price in thousandths of a currency unit
    volume: int

    def __post_init__(self):
        if self.volume < 0:
            raise DomainError(f"volume must be non-negative, got {self.volume}")
        if self.price_milli <= 0:
            raise DomainError(f"price must be positive, got {self.price_milli / 1000}")

    @property
    def price(self) -> float:
        return self.price_milli / 1000


@dataclass(frozen=True)
class VolumeHistogram:
    """One day's volume-vs-price distribution on a discrete price grid."""

    day_id: date
    grid_mode: GridMode
    price_milli: tuple[int, ...]
    volumes: tuple[int, ...]
    probabilities: tuple[float, ...]
    total_volume: int

    def __post_init__(self):
        n = len(self.price_milli)
        if n == 0 or n != len(self.volumes) or n != len(self.probabilities):
            raise ValueError("histogram needs equal-length, non-empty price/volume/probability columns")
        if any(b <= a for a, b in zip(self.price_milli, self.price_milli[1:], strict=False)):
            raise ValueError("histogram prices must be strictly ascending")
        if sum(self.volumes) != self.total_volume:
            raise ValueError("total_volume does not match the per-price volumes")

    @classmethod
    def from_volumes(
        cls, day_id: date, grid_mode: GridMode, price_milli: tuple[int, ...], volumes: tuple[int, ...]
    ) -> "VolumeHistogram":
        total = sum(volumes)
        return cls(
            day_id=day_id,
            grid_mode=grid_mode,
            price_milli=tuple(price_milli),
            volumes=tuple(volumes),
            probabilities=tuple(v / total for v in volumes),
            total_volume=total,
        )

    @property
    def prices(self) -> tuple[float, ...]:
        return tuple(m / 1000 for m in self.price_milli)

    @property
    def distinct_price_count(self) -> int:
        return len(self.price_milli)

    @property
    def min_price(self) -> float:
        return self.price_milli[0] / 1000

    @property
    def max_price(self) -> float:
        return self.price_milli[-1] / 1000


@dataclass(frozen=True)
class DailyMetrics:
    day_id: date
    total_volume: int
    total_amount: float
    weighted_mean_price: float
    distinct_price_count: int
    min_price: float
    max_price: float


class ModelKind(Enum):
    BESSEL0 = "Bessel0"
    BESSEL0_TWO_PEAK = "Bessel0TwoPeak"
    KUMMER1 = "Kummer1"
    UNFIT = "Unfit"
    DEGENERATE = "Degenerate"

    @property
    def k(self) -> int:
        """Explanatory-variable count used by the F test: 2 for the two-peak model, else 1."""
        return 2 if self is ModelKind.BESSEL0_TWO_PEAK else 1

    @property
    def n_params(self) -> int:
        return 6 if self is ModelKind.BESSEL0_TWO_PEAK else 3


@dataclass(frozen=True)
class BesselParams:
    C: float
    omega: float
    p0: float

    def __post_init__(self):
        if not self.C > 0:
            raise DomainError(f"C must be positive, got {self.C}")
        if not self.omega > 0:
            raise DomainError(f"omega must be positive, got {self.omega}")


@dataclass(frozen=True)
class TwoPeakParams:
    left: BesselParams
    right: BesselParams

    def __post_init__(self):
        if not self.left.p0 < self.right.p0:
            raise DomainError(
                f"two-peak components must be ordered by p0, got {self.left.p0} >= {self.right.p0}"
            )


@dataclass(frozen=True)
class KummerParams:
    C: float
    sqrtA: float
    p0: float

    def __post_init__(self):
        if not self.C > 0:
            raise DomainError(f"C must be positive, got {self.C}")
        if not self.sqrtA > 0:
            raise DomainError(f"sqrtA must be positive, got {self.sqrtA}")


Params = BesselParams | TwoPeakParams | KummerParams


def params_to_dict(params: Params | None) -> dict | None:
    if params is None:
        return None
    if isinstance(params, TwoPeakParams):
        return {"left": params_to_dict(params.left), "right": params_to_dict(params.right)}
    if isinstance(params, KummerParams):
        return {"C": params.C, "sqrtA": params.sqrtA, "p0": params.p0}
    return {"C": params.C, "omega": params.omega, "p0": params.p0}


def params_from_dict(kind: ModelKind, data: dict | None) -> Params | None:
    if data is None:
        return None
    if kind is ModelKind.BESSEL0_TWO_PEAK:
        return TwoPeakParams(BesselParams(**data["left"]), BesselParams(**data["right"]))
    if kind is ModelKind.KUMMER1:
        return KummerParams(**data)
    return BesselParams(**data)


@dataclass(frozen=True)
class StageRecord:
    stage: int
    kind: ModelKind
    grid_mode: GridMode
    n_points: int
    r_squared: float | None = None
    r2_crit: float | None = None
    passed: bool = False
    iterations: int = 0
    ssr: float | None = None
    params: Params | None = None
    flags: tuple[str, ...] = ()
    skipped: str | None = None


@dataclass(frozen=True)
class ClassifiedFit:
    day_id: date
    kind: ModelKind
    params: Params | None
    r_squared: float | None
    f_stat: float | None
    r2_crit: float | None
    r2_threshold: float | None
    passed: bool
    stage: int | None = None
    grid_mode: GridMode | None = None
    iterations: int = 0
    stage_log: tuple[StageRecord, ...] = ()

    @property
    def energy(self) -> float | None:
        """E_m of a first-order Kummer fit."""
        if isinstance(self.params, KummerParams):
            return 3.0 * self.params.sqrtA
        return None


@dataclass
class FitConfig:
    max_iterations: int = 200
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    ssr_rtol: float = 1e-10
    step_tol: float = 1e-12
    jacobian_step: float = 1e-6
    alpha: float = 0.05
    multistart_count: int = 3
    scan_points: int = 160
    sparse_threshold: int = 10
    min_distinct_prices: int = 4
    min_peak_separation_ticks: int = 2
    min_r_squared: float = 0.0
    grid: str = "auto"

    def __post_init__(self):
        errors: list[str] = []
        int_fields = [
            ("max_iterations", self.max_iterations),
            ("multistart_count", self.multistart_count),
            ("scan_points", self.scan_points),
            ("sparse_threshold", self.sparse_threshold),
            ("min_distinct_prices", self.min_distinct_prices),
            ("min_peak_separation_ticks", self.min_peak_separation_ticks),
        ]
        for name, value in int_fields:
            if not isinstance(value, int) or isinstance(value, bool):
                try:
                    setattr(self, name, int(value))
                except (TypeError, ValueError):
                    errors.append(f"{name} must be an integer, got {value!r}")
                    continue
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")

        float_fields = [
            ("lambda_init", self.lambda_init),
            ("lambda_up", self.lambda_up),
            ("lambda_down", self.lambda_down),
            ("ssr_rtol", self.ssr_rtol),
            ("step_tol", self.step_tol),
            ("jacobian_step", self.jacobian_step),
            ("alpha", self.alpha),
        ]
        for name, numeric_value in float_fields:
            try:
                setattr(self, name, float(numeric_value))
            except (TypeError, ValueError):
                errors.append(f"{name} must be a number, got {numeric_value!r}")
                continue
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")

        try:
            self.min_r_squared = float(self.min_r_squared)
        except (TypeError, ValueError):
            errors.append(f"min_r_squared must be a number, got {self.min_r_squared!r}")

        if isinstance(self.alpha, float) and not 0.0 < self.alpha < 1.0:
            errors.append(f"alpha must be between 0 and 1, got {self.alpha}")
        if isinstance(self.lambda_up, float) and self.lambda_up <= 1.0:
            errors.append(f"lambda_up must be > 1, got {self.lambda_up}")
        if isinstance(self.lambda_down, float) and self.lambda_down >= 1.0:
            errors.append(f"lambda_down must be < 1, got {self.lambda_down}")
        if isinstance(self.min_distinct_prices, int) and self.min_distinct_prices < 4:
            errors.append(f"min_distinct_prices must be >= 4, got {self.min_distinct_prices}")
        if self.grid not in ("auto", "2dp", "halfcent"):
            errors.append(f"grid must be 'auto', '2dp' or 'halfcent', got {self.grid!r}")

        if errors:
            raise ValueError("Invalid FitConfig:\n" + "\n".join(f"- {e}" for e in errors))


def _as_date(value) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


@dataclass(frozen=True)
class PeriodSpec:
    label: str
    start: date
    end: date

    def __post_init__(self):
        object.__setattr__(self, "start", _as_date(self.start))
        object.__setattr__(self, "end", _as_date(self.end))
        if not self.label:
            raise ValueError("period label must be non-empty")
        if self.start > self.end:
            raise ValueError(f"period {self.label!r} starts after it ends ({self.start} > {self.end})")

    def contains(self, day: date) -> bool:
        return self.start <= day <= self.end


@dataclass(frozen=True)
class DailySeriesPoint:
    day_id: date
    equilibrium_price: float
    total_volume: int
    total_amount: float
    fit_kind: ModelKind


@dataclass(frozen=True)
class RatePoint:
    prev_day: date
    day: date
    mean_return_rate: float
    intensity_change_rate: float
    amount_change_rate: float


@dataclass(frozen=True)
class SignificanceResult:
    statistic: float
    critical: float
    alpha: float
    passed: bool
    df: int


@dataclass(frozen=True)
class CorrelationEntry:
    pair: str
    r: float | None
    t: float | None
    t_crit: float | None
    passed: bool
    note: str | None = None


@dataclass(frozen=True)
class CorrelationReport:
    label: str
    n: int
    first_day: date | None
    last_day: date | None
    corr1: CorrelationEntry  # mean return vs intensity change
    corr2: CorrelationEntry  # mean return vs amount change
    corr3: CorrelationEntry  # intensity change vs amount change
    difference: float | None  # corr2.r - corr1.r


@dataclass(frozen=True)
class StageCounts:
    """How many days each cascade stage accepted."""

    total: int
    first_pass: int
    refined: int
    two_peak: int
    kummer: int
    unfit: int
    degenerate: int

    @property
    def single_bessel(self) -> int:
        return self.first_pass + self.refined

    @property
    def pass_rate(self) -> float:
        return self.single_bessel / self.total

    @property
    def stability_index(self) -> float:
        return (self.total - self.single_bessel) / self.total

    @property
    def pre_refinement_abnormal(self) -> float:
        return (self.total - self.first_pass) / self.total


@dataclass(frozen=True)
class SynthDaySpec:
    kind: ModelKind
    params: Params
    min_price: float
    max_price: float
    tick: float = 0.01
    trade_count: int = 200_000
    mean_trade_size: int = 100
    trade_size_rule: str = "constant"
    seed: int = 0
    day_id: date = date(2000, 1, 3)

    def __post_init__(self):
        errors: list[str] = []
        if self.kind not in (ModelKind.BESSEL0, ModelKind.BESSEL0_TWO_PEAK, ModelKind.KUMMER1):
            errors.append(f"kind must be a fittable model, got {self.kind.value}")
        if self.tick not in (0.01, 0.005):
            errors.append(f"tick must be 0.01 or 0.005, got {self.tick}")
        if not 0 < self.min_price < self.max_price:
            errors.append(f"need 0 < min_price < max_price, got {self.min_price}..{self.max_price}")
        centres = (
            (self.params.left.p0, self.params.right.p0)
            if isinstance(self.params, TwoPeakParams)
            else (self.params.p0,)
        )
        for p0 in centres:
            if not self.min_price <= p0 <= self.max_price:
                errors.append(f"p0={p0} lies outside the grid {self.min_price}..{self.max_price}")
        if self.trade_count < 1:
            errors.append(f"trade_count must be >= 1, got {self.trade_count}")
        if self.mean_trade_size < 1:
            errors.append(f"mean_trade_size must be >= 1, got {self.mean_trade_size}")
        if self.trade_size_rule not in ("constant", "geometric"):
            errors.append(f"trade_size_rule must be 'constant' or 'geometric', got {self.trade_size_rule!r}")
        if errors:
            raise ValueError("Invalid SynthDaySpec:\n" + "\n".join(f"- {e}" for e in errors))


@dataclass
class SynthCorpusSpec:
    day_count: int = 500
    start_date: date = date(2007, 4, 2)
    start_price: float = 3.5
    return_sigma: float = 0.01
    step_distribution: str = "normal"
    rho: float = 0.5
    base_volume: int = 2_000_000
    volume_change_scale: float = 0.2
    volume_reversion: float = 0.05
    omega: float = 80.0
    half_width: float = 0.2
    tick: float = 0.01
    mean_trade_size: int = 1000
    trade_size_rule: str = "constant"
    seed: int = 0

    def __post_init__(self):
        errors: list[str] = []
        for name in ("day_count", "base_volume", "mean_trade_size", "seed"):
            value = getattr(self, name)
            try:
                setattr(self, name, int(value))
            except (TypeError, ValueError):
                errors.append(f"{name} must be an integer, got {value!r}")
        for name in (
            "start_price", "return_sigma", "rho", "volume_change_scale", "volume_reversion", "omega", "half_width", "tick"
        ):
            value = getattr(self, name)
            try:
                setattr(self, name, float(value))
            except (TypeError, ValueError):
                errors.append(f"{name} must be a number, got {value!r}")
        if errors:
            raise ValueError("Invalid SynthCorpusSpec:\n" + "\n".join(f"- {e}" for e in errors))

        try:
            self.start_date = _as_date(self.start_date)
        except ValueError:
            errors.append(f"start_date must be an ISO date, got {self.start_date!r}")
        if self.day_count < 3:
            errors.append(f"day_count must be >= 3, got {self.day_count}")
        if abs(self.rho) > 1.0:
            errors.append(f"rho must lie in [-1, 1], got {self.rho}")
        if not 0.0 <= self.volume_reversion < 1.0:
            errors.append(f"volume_reversion must lie in [0, 1), got {self.volume_reversion}")
        if self.step_distribution not in ("normal", "laplace"):
            errors.append(f"step_distribution must be 'normal' or 'laplace', got {self.step_distribution!r}")
        if self.tick not in (0.01, 0.005):
            errors.append(f"tick must be 0.01 or 0.005, got {self.tick}")
        if self.trade_size_rule not in ("constant", "geometric"):
            errors.append(f"trade_size_rule must be 'constant' or 'geometric', got {self.trade_size_rule!r}")
        for name in ("start_price", "return_sigma", "volume_change_scale", "omega", "half_width"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.base_volume < self.mean_trade_size:
            errors.append("base_volume must be at least one trade of mean_trade_size")
        if self.start_price <= 2 * self.half_width:
            errors.append("start_price must exceed twice half_width so the price grid stays positive")
        if errors:
            raise ValueError("Invalid SynthCorpusSpec:\n" + "\n".join(f"- {e}" for e in errors))


@dataclass
class RunConfig:
    input_paths: list[str] = field(default_factory=list)
    out_dir: str = "out"
    alpha: float = 0.05
    jobs: int = 1
    log_file: str | None = None
    log_returns: bool = False
    period_assignment: str = "later"
    periods: list[PeriodSpec] = field(default_factory=list)
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    synth: SynthCorpusSpec = field(default_factory=SynthCorpusSpec)

    def __post_init__(self):
        errors: list[str] = []
        if isinstance(self.input_paths, str):
            self.input_paths = [self.input_paths]
        try:
            self.alpha = float(self.alpha)
            if not 0.0 < self.alpha < 1.0:
                errors.append(f"alpha must be between 0 and 1, got {self.alpha}")
        except (TypeError, ValueError):
            errors.append(f"alpha must be a number, got {self.alpha!r}")
        for name in ("jobs", "seed"):
            value = getattr(self, name)
            try:
                setattr(self, name, int(value))
            except (TypeError, ValueError):
                errors.append(f"{name} must be an integer, got {value!r}")
        if isinstance(self.jobs, int) and self.jobs < 1:
            errors.append(f"jobs must be >= 1, got {self.jobs}")
        self.log_returns = bool(self.log_returns)
        if self.period_assignment not in ("later", "earlier"):
            errors.append(f"period_assignment must be 'later' or 'earlier', got {self.period_assignment!r}")
        if not self.out_dir:
            errors.append("out_dir must be non-empty")
        if errors:
            raise ValueError("Invalid RunConfig:\n" + "\n".join(f"- {e}" for e in errors))
