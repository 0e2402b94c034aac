"""Command-line entry point: `pathloss-bench run | validate | report`.

Exit status: 0 success, 2 configuration error, 3 data error, 4 runtime
error, 5 report re-render error.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from pathloss_ncv.config import RunConfig, dump_config, validate_config
from pathloss_ncv.data_pipeline import (
    PUBLIC_DATASET_URL,
    generate_synthetic,
    load_csv,
    save_synthetic,
)
from pathloss_ncv.exceptions import ConfigError, DataError, FoldPlanError, PathlossError
from pathloss_ncv.nested_cv import EvaluationReport, leaky_evaluate, run_benchmark
from pathloss_ncv.report import load_report, write_artifacts
from pathloss_ncv.types import Dataset, ProcessingType

logger = logging.getLogger("pathloss_ncv")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4
EXIT_REPORT = 5


def _model_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathloss-bench",
        description="Nested cross validation benchmark of path-loss regressors.",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity (default INFO).",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_run_options(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", type=Path, help="YAML run configuration.")
        sub.add_argument("--data", help="CSV file, or `synthetic`.")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--threads", type=int, help="Parallel work items.")
        sub.add_argument("--out", dest="output_dir", help="Output directory.")
        sub.add_argument(
            "--models", type=_model_list, help="Comma-separated families, e.g. SVR,XGBR."
        )
        sub.add_argument("--outer-k", dest="outer_k", type=int)
        sub.add_argument("--inner-k", dest="inner_k", type=int)
        sub.add_argument(
            "--leaky-baseline",
            dest="leaky_baseline",
            action="store_true",
            default=None,
            help="Also run conventional (leaky) cross validation for comparison.",
        )
        sub.add_argument("--chart-format", dest="chart_format", choices=["svg", "html"])

    run = subparsers.add_parser("run", help="Run the benchmark.")
    add_run_options(run)
    validate = subparsers.add_parser(
        "validate", help="Validate a configuration and print it resolved."
    )
    add_run_options(validate)
    report = subparsers.add_parser(
        "report", help="Re-render the table and charts of a saved report."
    )
    report.add_argument(
        "source", type=Path, help="A report.yaml file or the directory holding it."
    )
    report.add_argument("--out", dest="output_dir", type=Path)
    report.add_argument(
        "--chart-format", dest="chart_format", choices=["svg", "html"], default="svg"
    )
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    keys = (
        "data",
        "seed",
        "threads",
        "output_dir",
        "models",
        "outer_k",
        "inner_k",
        "leaky_baseline",
        "chart_format",
    )
    return {key: getattr(args, key) for key in keys}


def load_data(config: RunConfig) -> Dataset:
    if config.is_synthetic:
        return generate_synthetic(config.synthetic)
    return load_csv(
        config.data,
        mapping=config.column_mapping or None,
        policy=config.load_policy,
        delimiter=config.delimiter,
    )


def _run_log(
    config: RunConfig,
    data: Dataset,
    report: EvaluationReport,
    timings: dict[str, float],
    total: float,
) -> dict[str, Any]:
    loading = data.last_step(ProcessingType.LOADING)
    dropped = loading.parameters.as_dict().get("dropped_rows", 0) if loading else 0
    return {
        "data_source": config.data,
        "expected_public_dataset": PUBLIC_DATASET_URL,
        "n_rows": data.n,
        "dropped_rows": dropped,
        "plan_hash": report.plan_hash,
        "seed": config.seed,
        "threads": config.threads,
        "best_model": report.best_model,
        "wall_time_seconds": {name: round(t, 3) for name, t in timings.items()},
        "total_wall_time_seconds": round(total, 3),
        "failures": {
            m.name: sum(len(fold.failures) for fold in m.folds) for m in report.models
        },
    }


def command_run(config: RunConfig) -> int:
    started = time.perf_counter()
    try:
        data = load_data(config)
    except DataError as e:
        logger.error("%s", e)
        return EXIT_DATA
    specs = config.estimator_specs()
    timings: dict[str, float] = {}
    try:
        report = run_benchmark(
            specs,
            data,
            outer_k=config.outer_k,
            inner_k=config.inner_k,
            seed=config.seed,
            selection_metric=config.selection_metric,
            n_jobs=config.threads,
            skip_failed=True,
            timings=timings,
        )
        leaky = None
        if config.leaky_baseline:
            leaky = leaky_evaluate(
                specs,
                data,
                k=config.outer_k,
                seed=config.seed,
                selection_metric=config.selection_metric,
                n_jobs=config.threads,
            )
    except FoldPlanError as e:
        logger.error("%s", e)
        return EXIT_DATA
    except PathlossError as e:
        logger.error("Benchmark failed: %s", e)
        return EXIT_RUNTIME

    out_dir = config.resolved_output_dir()
    try:
        write_artifacts(report, out_dir, config.report_formats, config.chart_format)
        if leaky is not None:
            write_artifacts(
                leaky,
                out_dir,
                [f for f in config.report_formats if f != "charts"],
                config.chart_format,
                prefix="leaky_",
            )
        if config.is_synthetic:
            save_synthetic(data, config.synthetic, out_dir / "synthetic.csv")
        run_log = _run_log(config, data, report, timings, time.perf_counter() - started)
        with open(out_dir / "run_log.yaml", "w") as f:
            yaml.safe_dump(run_log, f, sort_keys=False)
    except (OSError, RuntimeError, ValueError) as e:
        logger.error("Could not write the run artifacts: %s", e)
        return EXIT_RUNTIME
    logger.info("Best model %s; artifacts written to %s", report.best_model, out_dir)
    return EXIT_OK


def command_report(source: Path, output_dir: Optional[Path], chart_format: str) -> int:
    path = source / "report.yaml" if source.is_dir() else source
    try:
        report = load_report(path)
        out_dir = output_dir or path.parent
        write_artifacts(report, out_dir, ("table", "charts"), chart_format)
    except (OSError, ValueError, RuntimeError, yaml.YAMLError) as e:
        logger.error("Could not re-render %s: %s", path, e)
        return EXIT_REPORT
    logger.info("Re-rendered %s into %s", path, out_dir)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "report":
        return command_report(args.source, args.output_dir, args.chart_format)
    try:
        config = validate_config(args.config, _overrides(args))
    except ConfigError as e:
        for message in e.errors:
            logger.error("Invalid configuration: %s", message)
        return EXIT_CONFIG
    if args.command == "validate":
        sys.stdout.write(dump_config(config))
        return EXIT_OK
    return command_run(config)


if __name__ == "__main__":
    sys.exit(main())
