"""Probability-wave distribution models, the damped least-squares fitter and the fit cascade.

Three models describe a day's volume-vs-price probability:

* ``Bessel0``        C |J0(omega (p - p0))|
* ``Bessel0TwoPeak`` the sum of two Bessel0 components with separate centres
* ``Kummer1``        C exp(-sqrtA |p - p0|) |1 - 2 sqrtA |p - p0||

C, omega and sqrtA are fitted on a log scale so they stay positive; the centres
are clamped to the price grid. The cascade tries the models in order and keeps
the first whose R² clears the significance threshold.
"""

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date

import numpy as np
from scipy.signal import find_peaks

from src.errors import DegenerateDay, DomainError, ZeroVariance
from src.ingest import IngestedDay, build_histogram, snap_price
from src.models import (
    BesselParams,
    ClassifiedFit,
    DailyMetrics,
    FitConfig,
    GridMode,
    KummerParams,
    ModelKind,
    Params,
    StageRecord,
    TickRecord,
    TwoPeakParams,
    VolumeHistogram,
)
from src.specfun import J0_FIRST_ZERO, bessel_j0
from src.stats import f_statistic, r2_crit, r_squared

log = logging.getLogger(__name__)

FITTABLE = (ModelKind.BESSEL0, ModelKind.BESSEL0_TWO_PEAK, ModelKind.KUMMER1)
LAMBDA_MAX = 1e16
LOG_PARAM_BOUND = 60.0
_MIN_POINTS = {ModelKind.BESSEL0: 4, ModelKind.KUMMER1: 4, ModelKind.BESSEL0_TWO_PEAK: 7}


# --- model evaluators ---------------------------------------------------------


def model_bessel0(p, params: BesselParams):
    return params.C * np.abs(bessel_j0(params.omega * (np.asarray(p, dtype=float) - params.p0)))


def model_bessel0_two(p, params: TwoPeakParams):
    return model_bessel0(p, params.left) + model_bessel0(p, params.right)


def model_kummer1(p, params: KummerParams):
    u = params.sqrtA * np.abs(np.asarray(p, dtype=float) - params.p0)
    return params.C * np.exp(-u) * np.abs(1.0 - 2.0 * u)


def kummer_energy(sqrtA: float, n: int) -> float:
    """E_m = (1 + 2n) sqrtA for the n-th order Kummer eigenfunction."""
    if not sqrtA > 0:
        raise DomainError(f"sqrtA must be positive, got {sqrtA}")
    if n < 0:
        raise DomainError(f"order n must be non-negative, got {n}")
    return (1 + 2 * n) * sqrtA


def evaluate(kind: ModelKind, prices, params: Params):
    if kind is ModelKind.BESSEL0 and isinstance(params, BesselParams):
        return model_bessel0(prices, params)
    if kind is ModelKind.BESSEL0_TWO_PEAK and isinstance(params, TwoPeakParams):
        return model_bessel0_two(prices, params)
    if kind is ModelKind.KUMMER1 and isinstance(params, KummerParams):
        return model_kummer1(prices, params)
    raise ValueError(f"cannot evaluate {kind.value} with {type(params).__name__}")


# --- parameter vectors --------------------------------------------------------
# Bessel0 / Kummer1: [log C, log scale, p0]; two-peak: two Bessel0 blocks.


def _shape(kind: ModelKind, scale, delta):
    if kind is ModelKind.KUMMER1:
        u = scale * np.abs(delta)
        return np.exp(-u) * np.abs(1.0 - 2.0 * u)
    return np.abs(bessel_j0(scale * delta))


def _model_theta(kind: ModelKind, prices: np.ndarray, theta: np.ndarray) -> np.ndarray:
    if kind is ModelKind.BESSEL0_TWO_PEAK:
        return _model_theta(ModelKind.BESSEL0, prices, theta[:3]) + _model_theta(ModelKind.BESSEL0, prices, theta[3:])
    return math.exp(theta[0]) * _shape(kind, math.exp(theta[1]), prices - theta[2])


def _centre_indices(kind: ModelKind) -> tuple[int, ...]:
    return (2, 5) if kind is ModelKind.BESSEL0_TWO_PEAK else (2,)


def _encode(kind: ModelKind, params: Params) -> np.ndarray:
    if isinstance(params, TwoPeakParams):
        return np.concatenate([_encode(ModelKind.BESSEL0, params.left), _encode(ModelKind.BESSEL0, params.right)])
    scale = params.sqrtA if isinstance(params, KummerParams) else params.omega
    return np.array([math.log(params.C), math.log(scale), params.p0])


def _decode(kind: ModelKind, theta: np.ndarray) -> Params:
    if kind is ModelKind.BESSEL0_TWO_PEAK:
        a = BesselParams(math.exp(theta[0]), math.exp(theta[1]), float(theta[2]))
        b = BesselParams(math.exp(theta[3]), math.exp(theta[4]), float(theta[5]))
        left, right = (a, b) if a.p0 <= b.p0 else (b, a)
        return TwoPeakParams(left, right)
    if kind is ModelKind.KUMMER1:
        return KummerParams(math.exp(theta[0]), math.exp(theta[1]), float(theta[2]))
    return BesselParams(math.exp(theta[0]), math.exp(theta[1]), float(theta[2]))


# --- fit data -----------------------------------------------------------------


@dataclass(frozen=True)
class FitData:
    """Observed probabilities on a price grid, as seen by the solver."""

    prices: np.ndarray
    observed: np.ndarray
    tick: float

    @classmethod
    def from_histogram(cls, hist: VolumeHistogram) -> "FitData":
        return cls(
            prices=np.asarray(hist.prices, dtype=float),
            observed=np.asarray(hist.probabilities, dtype=float),
            tick=hist.grid_mode.tick,
        )

    @property
    def n(self) -> int:
        return len(self.prices)

    @property
    def lo(self) -> float:
        return float(self.prices[0])

    @property
    def hi(self) -> float:
        return float(self.prices[-1])

    def weighted_mean(self) -> float:
        total = float(self.observed.sum())
        if total <= 0:
            return 0.5 * (self.lo + self.hi)
        return float(np.dot(self.prices, self.observed) / total)


def _as_data(data: "FitData | VolumeHistogram") -> FitData:
    return data if isinstance(data, FitData) else FitData.from_histogram(data)


# --- initial guesses ----------------------------------------------------------


def _single_guess(kind: ModelKind, prices: np.ndarray, probs: np.ndarray, tick: float) -> BesselParams | KummerParams:
    idx = int(np.argmax(probs))  # first maximum, i.e. the lower price on ties
    p0 = float(prices[idx])
    c = float(probs[idx])
    halfwidth = max(p0 - float(prices[0]), float(prices[-1]) - p0, tick)
    if kind is ModelKind.KUMMER1:
        return KummerParams(C=c, sqrtA=1.0 / halfwidth, p0=p0)
    return BesselParams(C=c, omega=J0_FIRST_ZERO / halfwidth, p0=p0)


def _split_index(probs: np.ndarray) -> int:
    """Index of the deepest valley between the two largest local maxima."""
    padded = np.concatenate([[-1.0], probs, [-1.0]])
    peaks, _ = find_peaks(padded)
    peaks = peaks - 1
    if len(peaks) < 2:
        return len(probs) // 2
    ranked = sorted(peaks, key=lambda i: (-probs[i], i))
    a, b = sorted(ranked[:2])
    return a + int(np.argmin(probs[a : b + 1]))


def init_guess(data: "FitData | VolumeHistogram", kind: ModelKind) -> Params:
    d = _as_data(data)
    if d.n < 4:
        raise DegenerateDay(f"need at least 4 distinct prices, got {d.n}")
    if kind in (ModelKind.BESSEL0, ModelKind.KUMMER1):
        return _single_guess(kind, d.prices, d.observed, d.tick)
    if kind is not ModelKind.BESSEL0_TWO_PEAK:
        raise ValueError(f"no initial guess for {kind.value}")
    split = _split_index(d.observed)
    split = min(max(split, 1), d.n - 2)
    left = _single_guess(ModelKind.BESSEL0, d.prices[: split + 1], d.observed[: split + 1], d.tick)
    right = _single_guess(ModelKind.BESSEL0, d.prices[split:], d.observed[split:], d.tick)
    if right.p0 <= left.p0:
        right = BesselParams(right.C, right.omega, min(left.p0 + d.tick, d.hi))
        if right.p0 <= left.p0:
            left = BesselParams(left.C, left.omega, left.p0 - d.tick)
    return TwoPeakParams(left, right)  # type: ignore[arg-type]


def _scan_scale(kind: ModelKind, prices: np.ndarray, probs: np.ndarray, p0: float, tick: float, points: int):
    """Best (C, scale) for a fixed centre, with C solved in closed form per candidate scale."""
    farthest = max(p0 - float(prices[0]), float(prices[-1]) - p0, tick)
    if kind is ModelKind.KUMMER1:
        lo, hi = 0.25 / farthest, 0.5 / tick
    else:
        lo, hi = 0.5 * J0_FIRST_ZERO / farthest, J0_FIRST_ZERO / tick
    scales = np.geomspace(lo, max(hi, lo * 1.01), points)
    shapes = _shape(kind, scales[:, None], (prices - p0)[None, :])
    gg = np.einsum("ij,ij->i", shapes, shapes)
    gy = shapes @ probs
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(gg > 0, gy / gg, 0.0)
    c = np.maximum(c, 1e-12)
    ssr = np.sum((probs[None, :] - c[:, None] * shapes) ** 2, axis=1)
    best = int(np.argmin(ssr))
    return float(c[best]), float(scales[best])


def _centre_seeds(prices: np.ndarray, probs: np.ndarray, tick: float, count: int) -> list[float]:
    argmax = float(prices[int(np.argmax(probs))])
    total = float(probs.sum())
    wmean = float(np.dot(prices, probs) / total) if total > 0 else argmax
    mid = 0.5 * (float(prices[0]) + float(prices[-1]))
    candidates = [argmax, wmean, mid]
    for step in range(1, count + 1):
        candidates += [argmax - 0.5 * step * tick, argmax + 0.5 * step * tick]
    seeds: list[float] = []
    for c in candidates:
        c = min(max(c, float(prices[0])), float(prices[-1]))
        if all(abs(c - s) > 1e-9 for s in seeds):
            seeds.append(c)
        if len(seeds) == count:
            break
    return seeds


def seed_vectors(kind: ModelKind, data: "FitData | VolumeHistogram", config: FitConfig) -> list[np.ndarray]:
    """Starting points for the multistart fit: the plain guess plus scale-scanned seeds."""
    d = _as_data(data)
    starts = [_encode(kind, init_guess(d, kind))]
    if kind in (ModelKind.BESSEL0, ModelKind.KUMMER1):
        for p0 in _centre_seeds(d.prices, d.observed, d.tick, config.multistart_count):
            c, scale = _scan_scale(kind, d.prices, d.observed, p0, d.tick, config.scan_points)
            starts.append(np.array([math.log(c), math.log(scale), p0]))
        return starts

    split = min(max(_split_index(d.observed), 1), d.n - 2)
    sides = []
    for lo, hi in ((0, split + 1), (split, d.n)):
        prices, probs = d.prices[lo:hi], d.observed[lo:hi]
        argmax = float(prices[int(np.argmax(probs))])
        total = float(probs.sum())
        wmean = float(np.dot(prices, probs) / total) if total > 0 else argmax
        blocks = []
        for p0 in (argmax, wmean):
            c, omega = _scan_scale(ModelKind.BESSEL0, prices, probs, p0, d.tick, config.scan_points)
            blocks.append(np.array([math.log(c), math.log(omega), p0]))
        sides.append(blocks)
    pairs = [(0, 0), (1, 1), (0, 1), (1, 0)][: config.multistart_count]
    starts += [np.concatenate([sides[0][i], sides[1][j]]) for i, j in pairs]
    return starts


# --- damped least squares -----------------------------------------------------


@dataclass
class LmResult:
    kind: ModelKind
    theta: np.ndarray
    ssr: float
    initial_ssr: float
    iterations: int
    converged: bool
    flags: list[str] = field(default_factory=list)
    ssr_history: list[float] = field(default_factory=list)

    @property
    def params(self) -> Params:
        return _decode(self.kind, self.theta)


def _clamp(kind: ModelKind, theta: np.ndarray, lo: float, hi: float) -> np.ndarray:
    out = theta.copy()
    centres = _centre_indices(kind)
    for i in range(len(out)):
        if i in centres:
            out[i] = min(max(out[i], lo), hi)
        else:
            out[i] = min(max(out[i], -LOG_PARAM_BOUND), LOG_PARAM_BOUND)
    return out


def _jacobian(kind: ModelKind, prices: np.ndarray, theta: np.ndarray, rel_step: float) -> np.ndarray:
    jac = np.empty((len(prices), len(theta)))
    for j in range(len(theta)):
        h = rel_step * max(abs(theta[j]), 1.0)
        up = theta.copy()
        down = theta.copy()
        up[j] += h
        down[j] -= h
        jac[:, j] = (_model_theta(kind, prices, up) - _model_theta(kind, prices, down)) / (2.0 * h)
    return jac


def lm_fit(
    kind: ModelKind,
    data: "FitData | VolumeHistogram",
    init: "Params | np.ndarray",
    config: FitConfig,
) -> LmResult:
    """Levenberg-Marquardt minimisation of sum((observed - model)^2) from one starting point.

    Solver trouble is reported through flags rather than raised: ``singular``
    when the damped normal matrix could not be solved, ``max_iterations`` when
    the iteration budget ran out before convergence.
    """
    if kind not in FITTABLE:
        raise ValueError(f"cannot fit {kind.value}")
    d = _as_data(data)
    if d.n < _MIN_POINTS[kind]:
        raise DegenerateDay(f"{kind.value} needs at least {_MIN_POINTS[kind]} points, got {d.n}")
    theta0 = init if isinstance(init, np.ndarray) else _encode(kind, init)
    theta = _clamp(kind, np.asarray(theta0, dtype=float), d.lo, d.hi)

    residual = d.observed - _model_theta(kind, d.prices, theta)
    ssr = float(residual @ residual)
    result = LmResult(kind, theta, ssr, ssr, 0, converged=ssr == 0.0, ssr_history=[ssr])
    lam = config.lambda_init

    while not result.converged and result.iterations < config.max_iterations:
        result.iterations += 1
        jac = _jacobian(kind, d.prices, theta, config.jacobian_step)
        normal = jac.T @ jac
        gradient = jac.T @ residual
        diag = np.diag(normal).copy()
        if not np.any(diag > 0):
            result.flags.append("singular")
            break
        diag = np.maximum(diag, 1e-12 * diag.max())

        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                delta = np.linalg.solve(normal + lam * np.diag(diag), gradient)
            except np.linalg.LinAlgError:
                delta = None
            if delta is None or not np.all(np.isfinite(delta)):
                if "singular" not in result.flags:
                    result.flags.append("singular")
                lam *= config.lambda_up
                continue
            candidate = _clamp(kind, theta + delta, d.lo, d.hi)
            cand_residual = d.observed - _model_theta(kind, d.prices, candidate)
            cand_ssr = float(cand_residual @ cand_residual)
            if math.isfinite(cand_ssr) and cand_ssr < ssr:
                step = float(np.linalg.norm(candidate - theta))
                rel_change = (ssr - cand_ssr) / ssr
                theta, residual, ssr = candidate, cand_residual, cand_ssr
                result.ssr_history.append(ssr)
                lam = max(lam * config.lambda_down, 1e-15)
                accepted = True
                if ssr == 0.0 or rel_change < config.ssr_rtol or step < config.step_tol:
                    result.converged = True
                break
            lam *= config.lambda_up
        if not accepted:
            # No damping level reduces the SSR: a local minimum to working precision.
            result.converged = True

    if not result.converged:
        result.flags.append("max_iterations")
    result.theta = theta
    result.ssr = ssr
    return result


def fit_model(kind: ModelKind, data: "FitData | VolumeHistogram", config: FitConfig) -> LmResult:
    """Multistart fit; the lowest SSR wins, earlier starts win ties."""
    d = _as_data(data)
    best: LmResult | None = None
    for start in seed_vectors(kind, d, config):
        result = lm_fit(kind, d, start, config)
        if best is None or result.ssr < best.ssr:
            best = result
    assert best is not None
    return best


# --- cascade ------------------------------------------------------------------


def _f_stat(r2: float, n: int, k: int) -> float:
    return math.inf if r2 >= 1.0 else f_statistic(r2, n, k)


def _run_stage(stage: int, kind: ModelKind, hist: VolumeHistogram, config: FitConfig) -> StageRecord:
    n = hist.distinct_price_count
    if n < max(_MIN_POINTS[kind], config.min_distinct_prices):
        return StageRecord(stage, kind, hist.grid_mode, n, skipped=f"too few prices ({n})")
    d = FitData.from_histogram(hist)
    result = fit_model(kind, d, config)
    flags = tuple(result.flags)
    try:
        r2 = r_squared(d.observed, _model_theta(kind, d.prices, result.theta))
    except ZeroVariance:
        return StageRecord(stage, kind, hist.grid_mode, n, iterations=result.iterations, skipped="flat distribution")
    crit = r2_crit(config.alpha, n, kind.k)
    passed = r2 > max(crit, config.min_r_squared)

    params: Params | None
    if kind is ModelKind.BESSEL0_TWO_PEAK:
        gap = abs(float(result.theta[5] - result.theta[2]))
        if gap < config.min_peak_separation_ticks * d.tick - 1e-12:
            flags += ("collapsed",)
            passed = False
        params = _decode(kind, result.theta) if gap > 0 else None
    else:
        params = result.params
    return StageRecord(
        stage=stage,
        kind=kind,
        grid_mode=hist.grid_mode,
        n_points=n,
        r_squared=r2,
        r2_crit=crit,
        passed=passed,
        iterations=result.iterations,
        ssr=result.ssr,
        params=params,
        flags=flags,
    )


def _degenerate(day_id: date) -> ClassifiedFit:
    return ClassifiedFit(
        day_id=day_id,
        kind=ModelKind.DEGENERATE,
        params=None,
        r_squared=None,
        f_stat=None,
        r2_crit=None,
        r2_threshold=None,
        passed=False,
    )


def _classified(day_id: date, kind: ModelKind, record: StageRecord, log_: list[StageRecord], config: FitConfig) -> ClassifiedFit:
    r2 = record.r_squared
    return ClassifiedFit(
        day_id=day_id,
        kind=kind,
        params=record.params if record.passed else None,
        r_squared=r2,
        f_stat=_f_stat(r2, record.n_points, record.kind.k) if r2 is not None else None,
        r2_crit=record.r2_crit,
        r2_threshold=max(record.r2_crit, config.min_r_squared) if record.r2_crit is not None else None,
        passed=record.passed,
        stage=record.stage if record.passed else None,
        grid_mode=record.grid_mode,
        iterations=sum(r.iterations for r in log_),
        stage_log=tuple(log_),
    )


def fit_histograms(
    day_id: date, coarse: VolumeHistogram, fine: VolumeHistogram, config: FitConfig
) -> ClassifiedFit:
    """Run the cascade on a day's two-decimal (coarse) and half-cent (fine) histograms.

    Stage 1 fits Bessel0 on the starting grid; stage 2 retries Bessel0 on the
    half-cent grid when a sparse two-decimal day failed; stage 3 fits the
    two-peak superposition and stage 4 the first-order Kummer model, both on
    the grid of the last Bessel0 attempt.
    """
    min_points = config.min_distinct_prices
    start, start_stage, can_refine = coarse, 1, config.grid == "auto"
    if config.grid == "halfcent":
        start = fine
    elif config.grid == "auto" and coarse.distinct_price_count < min_points <= fine.distinct_price_count:
        start, start_stage, can_refine = fine, 2, False
    if start.distinct_price_count < min_points:
        log.info("%s: degenerate (%d distinct prices)", day_id, start.distinct_price_count)
        return _degenerate(day_id)

    stage_log: list[StageRecord] = []
    record = _run_stage(start_stage, ModelKind.BESSEL0, start, config)
    stage_log.append(record)
    current = start
    if not record.passed and can_refine and coarse.distinct_price_count < config.sparse_threshold:
        record = _run_stage(2, ModelKind.BESSEL0, fine, config)
        stage_log.append(record)
        current = fine
    if record.passed:
        return _finish(day_id, ModelKind.BESSEL0, record, stage_log, config)

    for stage, kind in ((3, ModelKind.BESSEL0_TWO_PEAK), (4, ModelKind.KUMMER1)):
        record = _run_stage(stage, kind, current, config)
        stage_log.append(record)
        if record.passed:
            return _finish(day_id, kind, record, stage_log, config)

    attempted = [r for r in stage_log if r.skipped is None]
    last = attempted[-1] if attempted else stage_log[-1]
    return _finish(day_id, ModelKind.UNFIT, last, stage_log, config)


def _finish(day_id: date, kind: ModelKind, record: StageRecord, stage_log: list[StageRecord], config: FitConfig) -> ClassifiedFit:
    fit = _classified(day_id, kind, record, stage_log, config)
    log.info(
        "%s: %s (stage %s, R2=%s, threshold=%s)",
        day_id,
        kind.value,
        fit.stage if fit.stage is not None else "-",
        f"{fit.r_squared:.4f}" if fit.r_squared is not None else "n/a",
        f"{fit.r2_threshold:.4f}" if fit.r2_threshold is not None else "n/a",
    )
    return fit


def fit_cascade(records: Sequence[TickRecord], config: FitConfig) -> ClassifiedFit:
    if not records:
        raise DegenerateDay("cannot fit an empty day")
    day_id = records[0].day_id
    try:
        coarse = build_histogram(list(records), GridMode.TWO_DECIMAL)
        fine = build_histogram(list(records), GridMode.HALF_CENT)
    except DegenerateDay:
        return _degenerate(day_id)
    return fit_histograms(day_id, coarse, fine, config)


def equilibrium_price(fit: ClassifiedFit, metrics: DailyMetrics) -> float:
    """Fitted centre of a significant single-Bessel day, else the volume-weighted mean price.

    The fallback is clamped to the day's grid range, taken on the fit's grid
    (two-decimal when the day was never fitted).
    """
    if fit.day_id != metrics.day_id:
        raise ValueError(f"fit is for {fit.day_id} but metrics are for {metrics.day_id}")
    if fit.kind is ModelKind.BESSEL0 and fit.passed and isinstance(fit.params, BesselParams):
        return fit.params.p0
    mode = fit.grid_mode or GridMode.TWO_DECIMAL
    lo, hi = snap_price(metrics.min_price, mode), snap_price(metrics.max_price, mode)
    return min(max(metrics.weighted_mean_price, lo), hi)


def plot_source(fit: ClassifiedFit) -> tuple[ModelKind, Params, GridMode] | None:
    """Model used for a day's plot data: the accepted one, else the best-R² attempt."""
    if fit.passed and fit.params is not None and fit.grid_mode is not None:
        return fit.kind, fit.params, fit.grid_mode
    tried = [r for r in fit.stage_log if r.params is not None and r.r_squared is not None]
    if not tried:
        return None
    best = max(tried, key=lambda r: r.r_squared)  # type: ignore[arg-type, return-value]
    return best.kind, best.params, best.grid_mode  # type: ignore[return-value]


def fitted_curve(kind: ModelKind, params: Params, hist: VolumeHistogram) -> list[tuple[float, float, float]]:
    fitted = evaluate(kind, np.asarray(hist.prices), params)
    return [(p, o, float(f)) for p, o, f in zip(hist.prices, hist.probabilities, fitted, strict=True)]


def _fit_ingested(job: tuple[IngestedDay, FitConfig]) -> ClassifiedFit:
    day, config = job
    return fit_histograms(day.day_id, day.coarse, day.fine, config)


def fit_days(days: Sequence[IngestedDay], config: FitConfig, jobs: int = 1) -> list[ClassifiedFit]:
    """Fit every day, optionally on a process pool; results are ordered by day."""
    ordered = sorted(days, key=lambda d: d.day_id)
    work = [(day, config) for day in ordered]
    if jobs <= 1 or len(work) <= 1:
        return [_fit_ingested(job) for job in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fit_ingested, work, chunksize=max(1, len(work) // (4 * jobs))))
