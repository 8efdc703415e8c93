import hashlib
import json

import pytest

from errors import DatasetError, InputError, UnknownLabelError
from frequentist import estimate_tau
from manager import DATA_DIR, REGISTRY, AnalysisManager, DatasetManager, ingest_csv, parse_csv_text
from models.config import AnalysisConfig
from models.dataset import Contrast, DesignMatrix
from nnhm import gls_fit
from posterior import build_posterior, marginal_effect
from priors import DuMouchelPrior, HalfNormalPrior, dumouchel_default_scale

from conftest import optional_dataset


# dataset registry


@pytest.mark.parametrize("name", ["sat", "aspirin"])
def test_bundled_checksums(name):
    raw = (DATA_DIR / f"{name}.csv").read_bytes()
    assert hashlib.sha256(raw).hexdigest() == REGISTRY[name].checksum


def test_load_sat(sat):
    assert sat.k == 8
    assert sat.labels[0] == "A"
    assert sat.y[0] == 28.39
    assert sat.s[0] == 14.9
    assert sat.covariate_names == []


def test_aspirin_contains_amis(aspirin):
    assert "AMIS" in aspirin.labels
    assert aspirin.k == 6


def test_listing_mentions_every_dataset(tmp_path):
    listing = DatasetManager(str(tmp_path)).format_listing()
    for name, entry in REGISTRY.items():
        assert name in listing
        assert f"k={entry.k}" in listing
    assert "not available" in listing


def test_unknown_dataset_suggests_names():
    with pytest.raises(UnknownLabelError) as error:
        DatasetManager().entry("aspirn")
    assert "aspirin" in error.value.suggestions


def test_unbundled_dataset_needs_data_dir(tmp_path):
    manager = DatasetManager(str(tmp_path))
    assert not manager.is_available("no2")
    with pytest.raises(InputError):
        manager.load("no2")


def test_unbundled_dataset_from_data_dir(tmp_path):
    (tmp_path / "copd.csv").write_text("label,y,se,fev1,duration\nt1,-0.2,0.1,1.2,52\nt2,-0.3,0.2,1.4,24\n")
    data = DatasetManager(str(tmp_path)).load("copd")
    assert data.covariate_names == ["fev1", "duration"]
    assert data.covariate("fev1").tolist() == [1.2, 1.4]


def test_checksum_mismatch(tmp_path):
    (tmp_path / "sat.csv").write_text("label,y,se\nA,1,1\nB,2,1\n")
    with pytest.raises(DatasetError):
        DatasetManager(bundled_dir=tmp_path).load("sat")


def test_export_then_ingest_is_identical(tmp_path, sat):
    path = tmp_path / "sat.csv"
    path.write_text(DatasetManager().export_text("sat"), encoding="utf-8")
    assert ingest_csv(path).same_as(sat)


# CSV validation


def test_comments_and_covariates():
    data = parse_csv_text("# note\nlabel,y,se,x\n\na,0.1,0.2,0\nb,0.3,0.4,1\n")
    assert data.labels == ("a", "b")
    assert data.covariate("x").tolist() == [0.0, 1.0]


@pytest.mark.parametrize(
    "text, row, fragment",
    [
        ("label,y,se\na,1,1\nb,2,1\nc,3,0\n", 3, "positive"),
        ("label,y,se\na,1,1\na,2,1\n", 2, "duplicate"),
        ("label,y,se\na,1,1\nb,x,1\n", 2, "not numeric"),
        ("label,y,se\na,1,1\nb,inf,1\n", 2, "not finite"),
        ("label,y,se\na,1\n", 1, "cells"),
        ("label,y,se\n,1,1\n", 1, "empty study label"),
    ],
)
def test_row_errors(text, row, fragment):
    with pytest.raises(DatasetError) as error:
        parse_csv_text(text)
    assert error.value.row == row
    assert fragment in str(error.value)


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("", "empty"),
        ("# only a comment\n", "empty"),
        ("label,y\na,1\n", "missing required column(s): se"),
        ("label,y,se,y\na,1,1,1\n", "repeated"),
        ("label,y,se\n", "no studies"),
    ],
)
def test_file_errors(text, fragment):
    with pytest.raises(DatasetError) as error:
        parse_csv_text(text)
    assert error.value.row is None
    assert fragment in str(error.value)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_csv(tmp_path / "absent.csv")


# analysis runs


def test_bayes_run_report(sat):
    output = AnalysisManager(AnalysisConfig()).run(sat, "sat")
    report = output.report
    assert set(output.files) == {"report.txt", "report.json", "trace.svg", "trace.csv", "forest.svg"}
    assert report["tau"]["median"] == pytest.approx(5.2, abs=0.1)
    assert report["tau"]["prior"] == "uniform"
    assert "prior_median" not in report["tau"]
    assert [s["target"] for s in report["studies"]] == list("ABCDEFGH")
    assert report["contrasts"][0]["target"] == "mu"
    assert report["predictions"][0]["target"] == "prediction"
    assert json.loads(output.files["report.json"])["tau"]["median"] == report["tau"]["median"]
    assert "tau posterior: median" in output.files["report.txt"]


def test_freq_run_report(aspirin):
    config = AnalysisConfig(mode="freq", estimator="dl", outputs=("report", "dataforest"))
    output = AnalysisManager(config).run(aspirin, "aspirin")
    assert set(output.files) == {"report.txt", "report.json", "data_forest.svg"}
    tau = output.report["tau"]
    assert tau["estimator"] == "dl"
    assert tau["dof"] == 5
    assert "DL" in output.files["report.txt"]


def test_exclude_amis(aspirin):
    config = AnalysisConfig(exclude="AMIS", outputs=("report",))
    report = AnalysisManager(config).run(aspirin, "aspirin").report
    assert report["dataset"]["k"] == 5
    assert report["dataset"]["excluded"] == "AMIS"
    assert report["tau"]["median"] == pytest.approx(0.094, abs=0.005)


def test_proper_prior_reports_prior_quantiles(aspirin):
    config = AnalysisConfig(prior="halfnormal:0.5", outputs=("report",))
    tau = AnalysisManager(config).run(aspirin).report["tau"]
    assert tau["prior_median"] == pytest.approx(0.5 * 0.6744897501960817)


def test_custom_contrast_and_regression(grouped):
    config = AnalysisConfig(
        prior="halfnormal:0.5",
        regression=("x",),
        contrasts=("difference:0,1",),
        predictions=("x=1",),
        outputs=("report",),
    )
    report = AnalysisManager(config).run(grouped, "grouped").report
    assert report["model"]["columns"] == ["intercept", "x"]
    assert report["contrasts"][0]["target"] == "difference"
    assert report["predictions"][0]["target"] == "prediction x=1"
    assert report["contrasts"][0]["median"] > 0


@pytest.mark.parametrize("mode", ["bayes", "freq"])
def test_forest_overall_row_is_the_intercept(sat, sat_posterior, mode):
    config = AnalysisConfig(mode=mode, contrasts=("double:2",), outputs=("report", "forest"))
    output = AnalysisManager(config).run(sat, "sat")
    forest = output.files["forest.svg"]
    assert '<g class="overall">\n<title>mu</title>' in forest
    assert "double" not in forest
    assert output.report["contrasts"][0]["target"] == "double"
    if mode == "bayes":
        mu = marginal_effect(sat_posterior, Contrast([1.0], "mu"))
        assert f"{mu.median:.2f} [{mu.ci95[0]:.2f}, {mu.ci95[1]:.2f}]" in forest


def test_empty_regression_is_intercept_only(sat, sat_posterior):
    design = DesignMatrix.from_covariates(sat, [])
    assert design.is_intercept_only
    assert list(design.column_labels) == ["intercept"]
    posterior = build_posterior(sat, design, sat_posterior.prior)
    assert posterior.median == sat_posterior.median
    assert posterior.ci95 == sat_posterior.ci95
    assert marginal_effect(posterior, 0) == marginal_effect(sat_posterior, 0)


def test_leave_one_out_sweep(aspirin):
    report, table = AnalysisManager(AnalysisConfig()).leave_one_out_sweep(aspirin, progress=False)
    rows = {row["excluded"]: row for row in report["rows"]}
    assert len(rows) == aspirin.k + 1
    assert rows[None]["tau_median"] == pytest.approx(0.20, abs=0.01)
    assert rows["AMIS"]["tau_median"] == pytest.approx(0.094, abs=0.005)
    assert min(row["tau_median"] for row in report["rows"]) == rows["AMIS"]["tau_median"]
    assert table.splitlines()[0].startswith("excluded")
    assert "AMIS" in table


# acceptance checks on the non-bundled datasets (skipped without METATRACE_DATA_DIR)


def test_no2_dumouchel_medians():
    data = optional_dataset("no2")
    prior = DuMouchelPrior(dumouchel_default_scale(data))
    plain = build_posterior(data, DesignMatrix.intercept_only(data.k), prior)
    assert plain.median == pytest.approx(0.065, abs=0.01)
    design = DesignMatrix.from_covariates(data, ["gender"])
    with_gender = build_posterior(data, design, prior)
    assert with_gender.median == pytest.approx(0.025, abs=0.01)
    assert abs(gls_fit(data, design, 0.0).beta_hat[1]) == pytest.approx(0.2, abs=0.05)


def test_copd_halfnormal_and_reml():
    data = optional_dataset("copd")
    prior = HalfNormalPrior(0.5)
    design = DesignMatrix.intercept_only(data.k)
    overall = marginal_effect(build_posterior(data, design, prior), Contrast([1.0], "mu"))
    assert overall.mean == pytest.approx(-0.25, abs=0.01)
    assert overall.median == pytest.approx(-0.25, abs=0.01)
    regression = build_posterior(data, DesignMatrix.from_covariates(data, ["fev1"]), prior)
    assert regression.median == pytest.approx(0.12, abs=0.01)
    assert estimate_tau(data, design, "reml") == pytest.approx(0.14, abs=0.005)
