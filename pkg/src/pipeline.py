import logging
import logging.handlers
import os
import sys
from collections.abc import Callable
from dataclasses import dataclass
from datetime import date

from src.conditioning import (
    daily_series,
    full_range_period,
    period_reports,
    rate_series,
    stage_counts,
)
from src.errors import (
    ConfigError,
    DomainError,
    EmptyInput,
    IoError,
    ParseError,
    TooFewDays,
    VpwaveError,
)
from src.ingest import (
    IngestedDay,
    ingest_days,
    merge_days,
    read_histogram_csv,
    read_metrics_csv,
    read_ticks_csv,
    write_histogram_csv,
    write_metrics_csv,
    write_ticks_csv,
)
from src.models import ClassifiedFit, DailyMetrics, GridMode, RunConfig
from src.reports import (
    read_fits_json,
    write_correlation_json,
    write_fits_csv,
    write_fits_json,
    write_plot_csv,
    write_rates_csv,
    write_series_csv,
    write_stability_json,
)
from src.synth import SynthCorpus, synth_corpus, write_truth_json
from src.wavefit import fit_days, fitted_curve, plot_source

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

METRICS_FILE = "daily_metrics.csv"
FITS_JSON = "fits.json"
FITS_CSV = "fits.csv"
RATES_FILE = "rates.csv"
SERIES_FILE = "daily_series.csv"
REPORT_FILE = "correlation_report.json"
STABILITY_FILE = "stability.json"
SYNTH_TICKS = "ticks.csv"
SYNTH_TRUTH = "truth.json"

log = logging.getLogger(__name__)


def setup_logging(log_file: str | None = None):
    root = logging.getLogger()
    # Avoid duplicate handlers on repeated calls
    if root.handlers:
        return
    root.setLevel(logging.INFO)
    formatter = logging.Formatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s")

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    root.addHandler(console_handler)

    if log_file:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=3)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)


def histogram_path(out_dir: str, day: date, mode: GridMode) -> str:
    return os.path.join(out_dir, "histograms", f"{day.isoformat()}.{mode.value}.csv")


def plot_path(out_dir: str, day: date) -> str:
    return os.path.join(out_dir, "plots", f"{day.isoformat()}.csv")


# --- stages -------------------------------------------------------------------


def run_ingest(cfg: RunConfig) -> list[IngestedDay]:
    """Tick CSVs -> per-day histograms on both grids plus daily_metrics.csv."""
    if not cfg.input_paths:
        raise ConfigError("no input files given (use --input or pipeline.input_paths)")
    groups = []
    for path in cfg.input_paths:
        if not os.path.isfile(path):
            raise IoError(f"input file not found: {path}")
        try:
            groups.append(read_ticks_csv(path))
        except (EmptyInput, ParseError, DomainError) as e:
            raise ConfigError(f"{path}: {e}") from e
    days = ingest_days(merge_days(groups))
    if not days:
        raise ConfigError("input holds no trading day with traded volume")

    for day in days:
        write_histogram_csv(histogram_path(cfg.out_dir, day.day_id, GridMode.TWO_DECIMAL), day.coarse)
        write_histogram_csv(histogram_path(cfg.out_dir, day.day_id, GridMode.HALF_CENT), day.fine)
    write_metrics_csv(os.path.join(cfg.out_dir, METRICS_FILE), [d.metrics for d in days])
    log.info("Wrote histograms for %d day(s) to %s", len(days), cfg.out_dir)
    return days


def load_ingested(out_dir: str) -> list[IngestedDay]:
    """Read back what run_ingest wrote."""
    metrics_path = os.path.join(out_dir, METRICS_FILE)
    if not os.path.isfile(metrics_path):
        raise IoError(f"{metrics_path} not found; run the ingest step first")
    days = []
    for m in read_metrics_csv(metrics_path):
        coarse = read_histogram_csv(histogram_path(out_dir, m.day_id, GridMode.TWO_DECIMAL), m.day_id, GridMode.TWO_DECIMAL)
        fine = read_histogram_csv(histogram_path(out_dir, m.day_id, GridMode.HALF_CENT), m.day_id, GridMode.HALF_CENT)
        days.append(IngestedDay(metrics=m, coarse=coarse, fine=fine))
    return days


def run_fit(cfg: RunConfig, days: list[IngestedDay] | None = None) -> list[ClassifiedFit]:
    """Histograms -> classified fits (fits.json, fits.csv) and per-day plot data."""
    if days is None:
        days = load_ingested(cfg.out_dir)
    fits = fit_days(days, cfg.fit, jobs=cfg.jobs)

    by_day = {d.day_id: d for d in days}
    for fit in fits:
        source = plot_source(fit)
        if source is None:
            continue
        kind, params, mode = source
        hist = by_day[fit.day_id].coarse if mode is GridMode.TWO_DECIMAL else by_day[fit.day_id].fine
        write_plot_csv(plot_path(cfg.out_dir, fit.day_id), fitted_curve(kind, params, hist))

    write_fits_json(os.path.join(cfg.out_dir, FITS_JSON), fits)
    write_fits_csv(os.path.join(cfg.out_dir, FITS_CSV), fits)
    unfit = sum(1 for f in fits if not f.passed)
    log.info("Fitted %d day(s), %d without a significant model", len(fits), unfit)
    return fits


def run_analyze(
    cfg: RunConfig,
    fits: list[ClassifiedFit] | None = None,
    metrics: list[DailyMetrics] | None = None,
) -> dict:
    """Fits + daily metrics -> rate series, correlation report and stability index."""
    if fits is None:
        fits_path = os.path.join(cfg.out_dir, FITS_JSON)
        if not os.path.isfile(fits_path):
            raise IoError(f"{fits_path} not found; run the fit step first")
        fits = read_fits_json(fits_path)
    if metrics is None:
        metrics_path = os.path.join(cfg.out_dir, METRICS_FILE)
        if not os.path.isfile(metrics_path):
            raise IoError(f"{metrics_path} not found; run the ingest step first")
        metrics = read_metrics_csv(metrics_path)

    series = daily_series(fits, metrics)
    write_series_csv(os.path.join(cfg.out_dir, SERIES_FILE), series)
    counts = stage_counts(fits)
    write_stability_json(os.path.join(cfg.out_dir, STABILITY_FILE), counts)

    try:
        rates = rate_series(series, log_returns=cfg.log_returns)
    except TooFewDays as e:
        log.warning("No rate series: %s", e)
        rates = []
    write_rates_csv(os.path.join(cfg.out_dir, RATES_FILE), rates)

    periods = cfg.periods or ([full_range_period(rates)] if rates else [])
    reports = period_reports(rates, periods, cfg.alpha, cfg.period_assignment)
    write_correlation_json(os.path.join(cfg.out_dir, REPORT_FILE), reports, cfg.alpha, cfg.log_returns)

    for r in reports:
        log.info(
            "Period %s (n=%d): r(return, intensity)=%s passed=%s",
            r.label,
            r.n,
            f"{r.corr1.r:.4f}" if r.corr1.r is not None else "n/a",
            r.corr1.passed,
        )
    log.info("Stability index %.4f over %d day(s)", counts.stability_index, counts.total)
    return {"reports": reports, "stage_counts": counts, "rates": rates, "series": series}


def run_synth(cfg: RunConfig) -> SynthCorpus:
    """Synthetic corpus -> ticks.csv and its ground-truth sidecar."""
    corpus = synth_corpus(cfg.synth)
    write_ticks_csv(os.path.join(cfg.out_dir, SYNTH_TICKS), corpus.ticks_by_day())
    write_truth_json(os.path.join(cfg.out_dir, SYNTH_TRUTH), corpus)
    log.info("Wrote %d synthetic day(s) to %s", len(corpus.days), cfg.out_dir)
    return corpus


def run_pipeline(cfg: RunConfig) -> dict:
    """ingest -> fit -> analyze in one process, without re-reading intermediate files."""
    days = run_ingest(cfg)
    fits = run_fit(cfg, days)
    return run_analyze(cfg, fits, [d.metrics for d in days])


COMMANDS: dict[str, Callable[[RunConfig], object]] = {
    "ingest": run_ingest,
    "fit": run_fit,
    "analyze": run_analyze,
    "synth": run_synth,
    "run": run_pipeline,
}


@dataclass
class CommandResult:
    exit_code: int
    value: object = None
    error: str | None = None


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (IoError, OSError)):
        return EXIT_IO
    return EXIT_CONFIG


def run(command: str, cfg: RunConfig) -> CommandResult:
    """Top-level entrypoint used by main.py; maps failures to exit codes."""
    setup_logging(cfg.log_file)
    runner_log = logging.getLogger("main")
    if command not in COMMANDS:
        runner_log.error("Unknown command %r", command)
        return CommandResult(EXIT_CONFIG, error=f"unknown command {command!r}")

    runner_log.info("Starting %s (out=%s)", command, cfg.out_dir)
    try:
        value = COMMANDS[command](cfg)
    except (VpwaveError, ValueError, OSError) as e:
        code = exit_code_for(e)
        runner_log.error("%s failed: %s", command, e)
        return CommandResult(code, error=str(e))
    return CommandResult(EXIT_OK, value=value)
