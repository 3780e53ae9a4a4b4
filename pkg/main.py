import argparse
import logging
import os

import yaml
from dotenv import load_dotenv

from src import pipeline as pipeline_runner
from src.conditioning import load_periods
from src.errors import ConfigError
from src.models import FitConfig, RunConfig, SynthCorpusSpec

load_dotenv()

DEFAULT_CONFIG = "config.yaml"


def _read_yaml(path: str) -> dict:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    return raw


def load_config(path: str | None = None) -> tuple[RunConfig, dict]:
    """Load the YAML config and return the typed RunConfig plus the raw dict.

    Without an explicit path, VPWAVE_CONFIG and then config.yaml are tried; a
    missing default file just means built-in defaults.
    """
    explicit = path or os.environ.get("VPWAVE_CONFIG")
    if explicit:
        raw = _read_yaml(explicit)
    elif os.path.isfile(DEFAULT_CONFIG):
        raw = _read_yaml(DEFAULT_CONFIG)
    else:
        raw = {}

    pipeline_dict = dict(raw.get("pipeline") or {})
    fit_dict = dict(raw.get("fit") or {})
    # Grid policy and thresholds may sit under pipeline: as well as fit:
    for key in ("grid", "sparse_threshold", "min_distinct_prices"):
        if key in pipeline_dict:
            fit_dict.setdefault(key, pipeline_dict.pop(key))
    synth_dict = dict(raw.get("synth") or {})
    # pipeline.seed seeds synthetic corpora unless synth: names its own
    if "seed" in pipeline_dict:
        synth_dict.setdefault("seed", pipeline_dict["seed"])
    elif "seed" in synth_dict:
        pipeline_dict["seed"] = synth_dict["seed"]
    try:
        fit = FitConfig(**fit_dict)
        synth = SynthCorpusSpec(**synth_dict)
        periods = load_periods(raw.get("periods"))
        cfg = RunConfig(fit=fit, synth=synth, periods=periods, **pipeline_dict)
    except TypeError as e:
        raise ConfigError(f"unknown config key: {e}") from e
    except ValueError as e:
        raise ConfigError(str(e)) from e
    fit.alpha = cfg.alpha
    return cfg, raw


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags win over file values."""
    if args.input:
        cfg.input_paths = list(args.input)
    if args.out:
        cfg.out_dir = args.out
    if args.alpha is not None:
        if not 0.0 < args.alpha < 1.0:
            raise ConfigError(f"--alpha must be between 0 and 1, got {args.alpha}")
        cfg.alpha = args.alpha
        cfg.fit.alpha = args.alpha
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        cfg.jobs = args.jobs
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.synth.seed = args.seed
    if args.grid:
        cfg.fit.grid = args.grid
    if args.periods:
        cfg.periods = load_periods(_read_yaml(args.periods).get("periods"))
    if args.log_file:
        cfg.log_file = args.log_file
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Volume-price probability-wave analysis of tick data")
    parser.add_argument(
        "command",
        choices=sorted(pipeline_runner.COMMANDS),
        help="ingest: ticks->histograms, fit: histograms->fits, analyze: fits->reports, synth: synthetic corpus, run: all",
    )
    parser.add_argument("--input", nargs="+", help="Tick CSV file(s)")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--config", help="YAML config file (default: $VPWAVE_CONFIG or config.yaml)")
    parser.add_argument("--alpha", type=float, help="Significance level")
    parser.add_argument("--jobs", type=int, help="Worker processes for per-day fits")
    parser.add_argument("--seed", type=int, help="Seed for synthetic corpora")
    parser.add_argument("--grid", choices=["2dp", "halfcent", "auto"], help="Price grid policy")
    parser.add_argument("--periods", help="YAML file with a periods: list")
    parser.add_argument("--log-file", help="Also log to this rotating file")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, _raw = load_config(args.config)
        cfg = apply_overrides(cfg, args)
    except ConfigError as e:
        pipeline_runner.setup_logging()
        logging.getLogger("main").error("Config error: %s", e)
        return pipeline_runner.EXIT_CONFIG
    return pipeline_runner.run(args.command, cfg).exit_code


if __name__ == "__main__":
    raise SystemExit(main())
