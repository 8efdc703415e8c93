# manager.py
import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from tqdm import tqdm

from errors import DatasetError, InputError, UnknownLabelError
from frequentist import blup, blup_summary
from models.config import AnalysisConfig
from models.dataset import Contrast, Dataset, DesignMatrix, Prediction, default_contrasts, suggest_similar
from models.results import MarginalSummary
from parsers import parse_contrast, parse_prediction, parse_prior
from plots import BayesMode, FreqMode, TraceOptions, compute_trace, export_trace_csv, render_forest_svg, render_trace_svg
from posterior import build_posterior, leave_one_out, marginal_effect
from priors import HeterogeneityPrior
from utils import dump_json, format_loo_table, format_report

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
REQUIRED_COLUMNS = ("label", "y", "se")


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    title: str
    k: int
    covariates: Tuple[str, ...]
    source: str
    checksum: Optional[str] = None

    @property
    def bundled(self) -> bool:
        return self.checksum is not None

    @property
    def filename(self) -> str:
        return f"{self.name}.csv"


REGISTRY: Dict[str, DatasetEntry] = {
    "sat": DatasetEntry(
        name="sat",
        title="SAT coaching experiments (8 schools)",
        k=8,
        covariates=(),
        source="Rubin (1981), J Educ Stat 6(4):377-401; bayesmeta::Rubin1981",
        checksum="437823f46a5b176b8252032063a236f639d34892cc8b4d07a4552ec4e0938b1d",
    ),
    "aspirin": DatasetEntry(
        name="aspirin",
        title="Aspirin after myocardial infarction, log-OR of mortality",
        k=6,
        covariates=(),
        source="Peto (1980), Lancet 1(8179):1172-1173; bayesmeta::Peto1980",
        checksum="8c49036d8a4e0c57d5e18f75b8d24088df1cf0832a185ff6ec15f1b63147dfa9",
    ),
    "no2": DatasetEntry(
        name="no2",
        title="NO2 exposure and respiratory illness in children, log-OR",
        k=9,
        covariates=("gender", "smoke", "no2"),
        source="Hasselblad, Eddy, Kotchmar (1992), J Air Waste Manag Assoc 42(5):662-671; metadat::dat.dumouchel1994",
    ),
    "copd": DatasetEntry(
        name="copd",
        title="Tiotropium in COPD, log-OR of exacerbation",
        k=22,
        covariates=("fev1", "duration"),
        source="Karner, Chong, Poole (2014), Cochrane Database Syst Rev; bayesmeta::KarnerEtAl2014",
    ),
}


def _number(text: str, column: str, row: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DatasetError(f"column '{column}' is not numeric: {text!r}", row=row) from None
    if not math.isfinite(value):
        raise DatasetError(f"column '{column}' is not finite: {text!r}", row=row)
    return value


def parse_csv_text(text: str, origin: str = "<csv>") -> Dataset:
    """
    Parses `label,y,se[,<covariate>...]` CSV text; lines starting with '#'
    are comments. Rows are numbered from 1 after the header.
    """
    lines = [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        raise DatasetError(f"{origin} is empty")
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = [name.strip() for name in next(reader)]
    missing = [name for name in REQUIRED_COLUMNS if name not in header]
    if missing:
        raise DatasetError(f"{origin} is missing required column(s): {', '.join(missing)}")
    if len(set(header)) != len(header):
        raise DatasetError(f"{origin} has repeated column names")
    covariate_names = [name for name in header if name not in REQUIRED_COLUMNS]

    labels: List[str] = []
    ys: List[float] = []
    ses: List[float] = []
    columns: Dict[str, List[float]] = {name: [] for name in covariate_names}
    for row, cells in enumerate(reader, start=1):
        if len(cells) != len(header):
            raise DatasetError(f"expected {len(header)} cells, found {len(cells)}", row=row)
        record = dict(zip(header, (cell.strip() for cell in cells)))
        label = record["label"]
        if not label:
            raise DatasetError("empty study label", row=row)
        if label in labels:
            raise DatasetError(f"duplicate study label '{label}'", row=row)
        se = _number(record["se"], "se", row)
        if se <= 0:
            raise DatasetError(f"standard error must be positive, got {se:g}", row=row)
        labels.append(label)
        ys.append(_number(record["y"], "y", row))
        ses.append(se)
        for name in covariate_names:
            columns[name].append(_number(record[name], name, row))

    if not labels:
        raise DatasetError(f"{origin} has a header but no studies")
    return Dataset(labels=tuple(labels), y=ys, s=ses, covariates=columns)


def ingest_csv(path) -> Dataset:
    """Reads and validates a study-level CSV file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found at {path}")
    dataset = parse_csv_text(path.read_text(encoding="utf-8"), origin=str(path))
    logger.info("loaded %d studies from %s", dataset.k, path)
    return dataset


class DatasetManager:
    """
    Registry of the example datasets. Bundled ones ship under data/ and are
    checksum-verified; the others are looked up in `data_dir`.
    """

    def __init__(self, data_dir: Optional[str] = None, bundled_dir: Path = DATA_DIR):
        self.data_dir = Path(data_dir) if data_dir else None
        self.bundled_dir = bundled_dir

    def entry(self, name: str) -> DatasetEntry:
        key = name.lower()
        if key not in REGISTRY:
            raise UnknownLabelError("dataset", name, suggest_similar(name, list(REGISTRY)))
        return REGISTRY[key]

    def entries(self) -> List[DatasetEntry]:
        return list(REGISTRY.values())

    def path_for(self, name: str) -> Optional[Path]:
        entry = self.entry(name)
        if entry.bundled:
            return self.bundled_dir / entry.filename
        if self.data_dir is not None and (self.data_dir / entry.filename).exists():
            return self.data_dir / entry.filename
        return None

    def is_available(self, name: str) -> bool:
        path = self.path_for(name)
        return path is not None and path.exists()

    def raw_bytes(self, name: str) -> bytes:
        entry = self.entry(name)
        path = self.path_for(name)
        if path is None:
            raise InputError(
                f"dataset '{entry.name}' is not bundled; place {entry.filename} in METATRACE_DATA_DIR "
                f"(source: {entry.source})"
            )
        raw = path.read_bytes()
        if entry.bundled and hashlib.sha256(raw).hexdigest() != entry.checksum:
            raise DatasetError(f"checksum mismatch for bundled dataset '{entry.name}' at {path}")
        return raw

    def load(self, name: str) -> Dataset:
        entry = self.entry(name)
        data = parse_csv_text(self.raw_bytes(name).decode("utf-8"), origin=entry.filename)
        if data.k != entry.k:
            logger.warning("dataset '%s' has %d studies, registry expects %d", entry.name, data.k, entry.k)
        missing = [c for c in entry.covariates if c not in data.covariates]
        if missing:
            logger.warning("dataset '%s' lacks covariate column(s): %s", entry.name, ", ".join(missing))
        return data

    def export_text(self, name: str) -> str:
        return self.raw_bytes(name).decode("utf-8")

    def format_listing(self) -> str:
        lines = []
        for entry in self.entries():
            status = "bundled" if entry.bundled else ("available" if self.is_available(entry.name) else "not available")
            covariates = ", ".join(entry.covariates) if entry.covariates else "-"
            lines.append(f"{entry.name:<8} k={entry.k:<3} covariates: {covariates:<20} [{status}]  {entry.source}")
        return "\n".join(lines)


@dataclass
class AnalysisOutput:
    report: dict
    files: Dict[str, str]


class AnalysisManager:
    """
    Runs one configured analysis and renders every requested artifact in
    memory; writing them out is left to the caller.
    """

    def __init__(self, config: AnalysisConfig):
        self.config = config

    def _design(self, data: Dataset) -> DesignMatrix:
        return DesignMatrix.from_covariates(data, self.config.regression)

    def _targets(self, design: DesignMatrix) -> Tuple[List[Contrast], List[Prediction]]:
        contrasts = [parse_contrast(text, design) for text in self.config.contrasts] or default_contrasts(design)
        predictions = [parse_prediction(text, design) for text in self.config.predictions]
        if not predictions and design.is_intercept_only:
            predictions = [Prediction([1.0])]
        return contrasts, predictions

    def run(self, data: Dataset, dataset_name: str = "") -> AnalysisOutput:
        config = self.config
        if config.exclude:
            data = data.without(config.exclude)
            logger.info("excluded study '%s'; %d studies remain", config.exclude, data.k)
        design = self._design(data)
        contrasts, predictions = self._targets(design)

        if config.mode == "bayes":
            prior = parse_prior(config.prior, data)
            posterior = build_posterior(data, design, prior, config.interval, config.workers)
            tau = self._bayes_tau(posterior, prior)
            mode = BayesMode(prior, config.interval, posterior)

            def summarize(target):
                return marginal_effect(posterior, target)

        else:
            result = blup(data, design, config.estimator)
            tau = self._freq_tau(result)
            mode = FreqMode(config.estimator, result)

            def summarize(target):
                return blup_summary(result, data, target)

        studies = [summarize(i) for i in range(data.k)]
        contrast_rows = [summarize(c) for c in contrasts]
        prediction_rows = [summarize(p) for p in predictions]

        report = {
            "dataset": {"name": dataset_name, "k": data.k, "excluded": config.exclude},
            "model": {
                "mode": config.mode,
                "prior": config.prior if config.mode == "bayes" else None,
                "estimator": config.estimator if config.mode == "freq" else None,
                "regression": list(config.regression),
                "columns": list(design.column_labels),
                "interval": config.interval,
            },
            "tau": tau,
            "studies": [_summary_dict(s) for s in studies],
            "contrasts": [_summary_dict(s) for s in contrast_rows],
            "predictions": [_summary_dict(s) for s in prediction_rows],
        }

        files: Dict[str, str] = {}
        outputs = set(config.outputs)
        if "report" in outputs:
            files["report.txt"] = format_report(report)
            files["report.json"] = dump_json(report)
        if outputs & {"trace", "csv"}:
            trace = compute_trace(
                data, design, [*contrasts, *predictions], mode, config.grid_points, config.tau_max, config.workers
            )
            if "trace" in outputs:
                title = f"{dataset_name or 'data'}: {config.mode} trace plot"
                files["trace.svg"] = render_trace_svg(trace, TraceOptions(bands=tuple(config.bands), title=title))
            if "csv" in outputs:
                files["trace.csv"] = export_trace_csv(trace)
        if "forest" in outputs:
            overall = summarize(Contrast([1.0], "mu")) if design.is_intercept_only else None
            prediction = prediction_rows[0] if prediction_rows else None
            files["forest.svg"] = render_forest_svg(data, studies, overall, prediction, title=dataset_name or None)
        if "dataforest" in outputs:
            files["data_forest.svg"] = render_forest_svg(data, None, title=dataset_name or None)
        return AnalysisOutput(report=report, files=files)

    def _bayes_tau(self, posterior, prior: HeterogeneityPrior) -> dict:
        tau = {
            "median": posterior.median,
            "mean": posterior.mean,
            "mode": posterior.mode,
            "ci95": list(posterior.ci95),
            "tau_max": posterior.tau_max,
            "log_norm_const": posterior.log_norm_const,
            "prior": prior.spec,
        }
        if prior.proper:
            tau["prior_median"] = prior.quantile(0.5)
            tau["prior_q95"] = prior.quantile(0.95)
        return tau

    def _freq_tau(self, result) -> dict:
        ci = result.tau_ci95
        return {
            "estimate": result.tau_hat,
            "estimator": result.estimator,
            "ci95": [ci.lo, ci.hi],
            "ci_level": ci.level,
            "dof": ci.dof,
            "degenerate": ci.degenerate,
            "q_at_zero": result.q_at_zero,
        }

    def leave_one_out_sweep(self, data: Dataset, progress: bool = True) -> Tuple[dict, str]:
        """Tau posterior median and first contrast median with each study left out in turn."""
        config = self.config
        design = self._design(data)
        contrasts, _ = self._targets(design)
        prior = parse_prior(config.prior, data)
        full = build_posterior(data, design, prior, config.interval, config.workers)
        rows = [
            {
                "excluded": None,
                "tau_median": full.median,
                "target": contrasts[0].label,
                "target_median": marginal_effect(full, contrasts[0]).median,
            }
        ]
        for label in tqdm(data.labels, desc="leave-one-out", disable=not progress):
            reduced = leave_one_out(data, design, prior, label, config.interval, config.workers)
            rows.append(
                {
                    "excluded": label,
                    "tau_median": reduced.median,
                    "target": contrasts[0].label,
                    "target_median": marginal_effect(reduced, contrasts[0]).median,
                }
            )
        report = {"prior": prior.spec, "rows": rows}
        return report, format_loo_table(rows)


def _summary_dict(summary: MarginalSummary) -> dict:
    return {
        "target": summary.target,
        "mean": summary.mean,
        "sd": summary.sd,
        "median": summary.median,
        "ci95": list(summary.ci95),
    }
