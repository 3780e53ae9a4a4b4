"""CSV / JSON artifacts written and read by the pipeline stages.

JSON is written with sorted keys and no timestamps so reruns on the same input
are byte-identical. Non-finite floats (an F statistic at R² = 1, a t statistic
at |r| = 1) are written as null.
"""

import csv
import json
import logging
import math
import os
from collections.abc import Sequence
from datetime import date
from typing import Any

from src.errors import IoError, ParseError
from src.ingest import format_price
from src.models import (
    ClassifiedFit,
    CorrelationEntry,
    CorrelationReport,
    DailySeriesPoint,
    GridMode,
    ModelKind,
    RatePoint,
    StageCounts,
    StageRecord,
    params_from_dict,
    params_to_dict,
)

log = logging.getLogger(__name__)

FITS_CSV_HEADER = (
    "day",
    "kind",
    "passed",
    "stage",
    "grid",
    "r_squared",
    "f_stat",
    "r2_crit",
    "r2_threshold",
    "iterations",
    "energy",
    "params",
)
PLOT_HEADER = ("price", "observed_prob", "fitted_prob")
RATES_HEADER = ("day", "ret", "dint", "damt")
SERIES_HEADER = ("day", "equilibrium_price", "total_volume", "total_amount", "fit_kind")


def _finite(value: float | None) -> float | None:
    if value is None or not math.isfinite(value):
        return None
    return value


def _fmt(value: float | None) -> str:
    value = _finite(value)
    return "" if value is None else repr(value)


def _write_json(path: str, payload: Any) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def _read_json(path: str) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, f"{path}: {e.msg}") from e


# --- fits ---------------------------------------------------------------------


def stage_to_dict(record: StageRecord) -> dict:
    return {
        "stage": record.stage,
        "kind": record.kind.value,
        "grid": record.grid_mode.value,
        "n_points": record.n_points,
        "r_squared": _finite(record.r_squared),
        "r2_crit": record.r2_crit,
        "passed": record.passed,
        "iterations": record.iterations,
        "ssr": _finite(record.ssr),
        "params": params_to_dict(record.params),
        "flags": list(record.flags),
        "skipped": record.skipped,
    }


def fit_to_dict(fit: ClassifiedFit) -> dict:
    return {
        "day": fit.day_id.isoformat(),
        "kind": fit.kind.value,
        "params": params_to_dict(fit.params),
        "r_squared": _finite(fit.r_squared),
        "f_stat": _finite(fit.f_stat),
        "r2_crit": fit.r2_crit,
        "r2_threshold": fit.r2_threshold,
        "passed": fit.passed,
        "stage": fit.stage,
        "grid": fit.grid_mode.value if fit.grid_mode else None,
        "iterations": fit.iterations,
        "energy": fit.energy,
        "stage_log": [stage_to_dict(r) for r in fit.stage_log],
    }


def _stage_from_dict(d: dict) -> StageRecord:
    kind = ModelKind(d["kind"])
    return StageRecord(
        stage=int(d["stage"]),
        kind=kind,
        grid_mode=GridMode(d["grid"]),
        n_points=int(d["n_points"]),
        r_squared=d.get("r_squared"),
        r2_crit=d.get("r2_crit"),
        passed=bool(d.get("passed", False)),
        iterations=int(d.get("iterations", 0)),
        ssr=d.get("ssr"),
        params=params_from_dict(kind, d.get("params")),
        flags=tuple(d.get("flags", ())),
        skipped=d.get("skipped"),
    )


def fit_from_dict(d: dict) -> ClassifiedFit:
    kind = ModelKind(d["kind"])
    r2 = d.get("r_squared")
    f_stat = d.get("f_stat")
    if f_stat is None and r2 is not None and r2 >= 1.0:
        f_stat = math.inf
    return ClassifiedFit(
        day_id=date.fromisoformat(d["day"]),
        kind=kind,
        params=params_from_dict(kind, d.get("params")),
        r_squared=r2,
        f_stat=f_stat,
        r2_crit=d.get("r2_crit"),
        r2_threshold=d.get("r2_threshold"),
        passed=bool(d["passed"]),
        stage=d.get("stage"),
        grid_mode=GridMode(d["grid"]) if d.get("grid") else None,
        iterations=int(d.get("iterations", 0)),
        stage_log=tuple(_stage_from_dict(s) for s in d.get("stage_log", [])),
    )


def write_fits_json(path: str, fits: Sequence[ClassifiedFit]) -> None:
    _write_json(path, {"fits": [fit_to_dict(f) for f in sorted(fits, key=lambda f: f.day_id)]})


def read_fits_json(path: str) -> list[ClassifiedFit]:
    payload = _read_json(path)
    try:
        return [fit_from_dict(d) for d in payload["fits"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(1, f"{path}: malformed fit record ({e})") from e


def write_fits_csv(path: str, fits: Sequence[ClassifiedFit]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(FITS_CSV_HEADER)
        for fit in sorted(fits, key=lambda f: f.day_id):
            params = params_to_dict(fit.params)
            writer.writerow([
                fit.day_id.isoformat(),
                fit.kind.value,
                int(fit.passed),
                fit.stage if fit.stage is not None else "",
                fit.grid_mode.value if fit.grid_mode else "",
                _fmt(fit.r_squared),
                _fmt(fit.f_stat),
                _fmt(fit.r2_crit),
                _fmt(fit.r2_threshold),
                fit.iterations,
                _fmt(fit.energy),
                json.dumps(params, sort_keys=True) if params else "",
            ])


def write_plot_csv(path: str, rows: Sequence[tuple[float, float, float]]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PLOT_HEADER)
        for price, observed, fitted in rows:
            writer.writerow([format_price(round(price * 1000)), repr(observed), repr(fitted)])


# --- analysis -----------------------------------------------------------------


def write_rates_csv(path: str, rates: Sequence[RatePoint]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RATES_HEADER)
        for r in rates:
            writer.writerow([
                r.day.isoformat(),
                repr(r.mean_return_rate),
                repr(r.intensity_change_rate),
                repr(r.amount_change_rate),
            ])


def write_series_csv(path: str, series: Sequence[DailySeriesPoint]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for p in series:
            writer.writerow([
                p.day_id.isoformat(),
                repr(p.equilibrium_price),
                p.total_volume,
                repr(p.total_amount),
                p.fit_kind.value,
            ])


def entry_to_dict(entry: CorrelationEntry) -> dict:
    return {
        "pair": entry.pair,
        "r": entry.r,
        "t": _finite(entry.t),
        "t_crit": entry.t_crit,
        "passed": entry.passed,
        "note": entry.note,
    }


def report_to_dict(report: CorrelationReport) -> dict:
    return {
        "label": report.label,
        "n": report.n,
        "index_range": [
            report.first_day.isoformat() if report.first_day else None,
            report.last_day.isoformat() if report.last_day else None,
        ],
        "corr1": entry_to_dict(report.corr1),
        "corr2": entry_to_dict(report.corr2),
        "corr3": entry_to_dict(report.corr3),
        "difference": report.difference,
    }


def write_correlation_json(path: str, reports: Sequence[CorrelationReport], alpha: float, log_returns: bool) -> None:
    _write_json(
        path,
        {
            "alpha": alpha,
            "returns": "log" if log_returns else "simple",
            "periods": [report_to_dict(r) for r in reports],
        },
    )


def counts_to_dict(counts: StageCounts) -> dict:
    return {
        "total_days": counts.total,
        "first_pass": counts.first_pass,
        "refined": counts.refined,
        "two_peak": counts.two_peak,
        "kummer": counts.kummer,
        "unfit": counts.unfit,
        "degenerate": counts.degenerate,
        "pass_rate": counts.pass_rate,
        "stability_index": counts.stability_index,
        "pre_refinement_abnormal": counts.pre_refinement_abnormal,
    }


def write_stability_json(path: str, counts: StageCounts) -> None:
    _write_json(path, counts_to_dict(counts))


def read_report_json(path: str) -> dict:
    payload = _read_json(path)
    if not isinstance(payload, dict):
        raise ParseError(1, f"{path}: expected a JSON object")
    return payload
