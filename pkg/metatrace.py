"""
Command-line front end.

Usage:
  python metatrace.py run --dataset sat --mode bayes --prior uniform --out out/
  python metatrace.py run --data copd.csv --mode freq --estimator reml --out out/
  python metatrace.py run --dataset aspirin --exclude AMIS --outputs report
  python metatrace.py loo --dataset aspirin --prior uniform
  python metatrace.py datasets list
  python metatrace.py datasets export sat sat.csv

Environment (also read from .env):
  METATRACE_DATA_DIR     directory holding dataset CSVs that are not bundled
  METATRACE_LOG_LEVEL    default log level (WARNING)
  METATRACE_WORKERS      default worker threads for grid evaluation (1)
  METATRACE_GRID_POINTS  default trace grid size (201)

Exit codes: 0 success, 2 input error, 3 model/numeric error, 4 I/O error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from errors import InputError, ModelError
from manager import AnalysisManager, DatasetManager, ingest_csv
from models.config import DEFAULT_OUTPUTS, AnalysisConfig
from models.dataset import Dataset
from parsers import parse_regression, split_list
from utils import dump_json, write_outputs

logger = logging.getLogger("metatrace")

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_IO = 0, 2, 3, 4


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if not value:
        return default
    try:
        return int(value)
    except ValueError:
        raise InputError(f"{name} must be an integer, got '{value}'") from None


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--log-level", default=os.getenv("METATRACE_LOG_LEVEL", "WARNING"), help="Logging level")
    parser.add_argument("--data-dir", default=os.getenv("METATRACE_DATA_DIR"), help="Directory with non-bundled dataset CSVs")
    parser.add_argument("--workers", type=int, default=_env_int("METATRACE_WORKERS", 1), help="Worker threads for grid evaluation")


def _add_source(parser: argparse.ArgumentParser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", help="Path to a CSV with columns label,y,se[,covariates...]")
    source.add_argument("--dataset", help="Name of a registered example dataset (see `datasets list`)")


def _add_model(parser: argparse.ArgumentParser):
    parser.add_argument("--prior", default="uniform", help="uniform | halfnormal:<scale> | dumouchel[:<s0>]")
    parser.add_argument("--regression", default="", help="Comma-separated covariate columns (empty = intercept only)")
    parser.add_argument("--contrast", action="append", default=[], help="'label:c1,c2,...' (repeatable)")
    parser.add_argument("--interval", default="shortest", choices=["shortest", "central"], help="Credible interval type")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metatrace", description="Random-effects meta-analysis with trace plots.")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one analysis and write report/plots")
    _add_source(run)
    _add_model(run)
    run.add_argument("--mode", default="bayes", choices=["bayes", "freq"], help="Bayesian or frequentist analysis")
    run.add_argument("--estimator", default="reml", choices=["reml", "ml", "dl"], help="Heterogeneity estimator (freq mode)")
    run.add_argument("--predict-at", action="append", default=[], help="'covariate=value[,...]' prediction (repeatable)")
    run.add_argument("--exclude", help="Study label to leave out")
    run.add_argument("--outputs", default=",".join(DEFAULT_OUTPUTS), help="Subset of report,trace,forest,csv,dataforest")
    run.add_argument("--out", default="out", help="Output directory")
    run.add_argument("--grid-points", type=int, default=_env_int("METATRACE_GRID_POINTS", 201), help="Trace grid size (>= 21)")
    run.add_argument("--tau-max", type=float, help="Upper end of the trace plot's tau axis")
    run.add_argument("--bands", action="append", default=[], help="Series label to draw with conditional 95%% bands (repeatable)")
    _add_common(run)

    loo = commands.add_parser("loo", help="Leave-one-out sensitivity sweep (Bayesian)")
    _add_source(loo)
    _add_model(loo)
    loo.add_argument("--out", help="Directory for loo.json")
    loo.add_argument("--no-progress", dest="progress", action="store_false", help="Hide the progress bar")
    _add_common(loo)

    datasets = commands.add_parser("datasets", help="List or export the example datasets")
    actions = datasets.add_subparsers(dest="action", required=True)
    listing = actions.add_parser("list", help="List registered datasets")
    _add_common(listing)
    export = actions.add_parser("export", help="Write a dataset CSV")
    export.add_argument("name")
    export.add_argument("path")
    _add_common(export)
    return parser


def _load_data(args) -> Dataset:
    if args.data:
        return ingest_csv(args.data)
    return DatasetManager(args.data_dir).load(args.dataset)


def _config(args, mode: str, outputs, out) -> AnalysisConfig:
    return AnalysisConfig(
        mode=mode,
        prior=args.prior,
        estimator=getattr(args, "estimator", "reml"),
        regression=parse_regression(args.regression),
        contrasts=tuple(args.contrast),
        predictions=tuple(getattr(args, "predict_at", [])),
        exclude=getattr(args, "exclude", None),
        interval=args.interval,
        outputs=tuple(outputs),
        out_dir=Path(out) if out else Path("out"),
        grid_points=getattr(args, "grid_points", 201),
        tau_max=getattr(args, "tau_max", None),
        bands=tuple(getattr(args, "bands", [])),
        workers=args.workers,
    )


def cmd_run(args) -> int:
    config = _config(args, args.mode, split_list(args.outputs), args.out)
    data = _load_data(args)
    output = AnalysisManager(config).run(data, dataset_name=args.dataset or Path(args.data).stem)
    written = write_outputs(config.out_dir, output.files)
    if "report.txt" in output.files:
        print(output.files["report.txt"], end="")
    for path in written:
        logger.info("wrote %s", path)
    return EXIT_OK


def cmd_loo(args) -> int:
    config = _config(args, "bayes", ("report",), args.out)
    data = _load_data(args)
    report, table = AnalysisManager(config).leave_one_out_sweep(data, progress=args.progress)
    print(table, end="")
    if args.out:
        write_outputs(args.out, {"loo.json": dump_json(report)})
    return EXIT_OK


def cmd_datasets(args) -> int:
    manager = DatasetManager(args.data_dir)
    if args.action == "list":
        print(manager.format_listing())
        return EXIT_OK
    target = Path(args.path)
    write_outputs(target.parent if str(target.parent) else ".", {target.name: manager.export_text(args.name)})
    print(f"[INFO] wrote {manager.entry(args.name).name} to {target}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "loo": cmd_loo, "datasets": cmd_datasets}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv(".env")
    try:
        args = build_parser().parse_args(argv)
    except InputError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_INPUT

    level = logging.getLevelName(str(args.log_level).upper())
    if not isinstance(level, int):
        print(f"[ERROR] unknown log level '{args.log_level}'", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(format="[%(levelname)s] %(name)s: %(message)s", level=level)

    try:
        return COMMANDS[args.command](args)
    except InputError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_INPUT
    except ModelError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
