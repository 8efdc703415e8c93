import csv
import io
import re
from dataclasses import replace

import numpy as np
import pytest

from errors import DimensionError, InputError, UnknownLabelError
from frequentist import blup, blup_summary
from models.dataset import Contrast, Dataset, DesignMatrix, Prediction
from plots import (
    TRACE_BOTTOM,
    TRACE_TOP,
    BayesMode,
    FreqMode,
    TraceOptions,
    compute_trace,
    export_trace_csv,
    nice_ticks,
    render_forest_svg,
    render_trace_svg,
)
from posterior import build_posterior, marginal_effect
from priors import HalfNormalPrior, UniformPrior

MU = Contrast([1.0], "mu")


@pytest.fixture(scope="module")
def aspirin_halfnormal(aspirin):
    return build_posterior(aspirin, DesignMatrix.intercept_only(aspirin.k), HalfNormalPrior(0.5))


@pytest.fixture(scope="module")
def sat_trace(sat, sat_posterior):
    design = DesignMatrix.intercept_only(sat.k)
    return compute_trace(sat, design, [MU], BayesMode(UniformPrior(), posterior=sat_posterior))


def test_sat_traces_start_at_common_effect(sat, sat_trace):
    assert sat_trace.tau_grid[0] == 0.0
    assert sat_trace.grid_len == 201
    at_zero = [trace.mean[0] for trace in sat_trace.study_traces]
    assert at_zero == pytest.approx([7.870546] * sat.k, abs=1e-5)
    assert sat_trace.series("mu").mean[0] == pytest.approx(7.870546, abs=1e-5)


def test_school_a_moves_toward_its_estimate(sat_trace):
    school_a = sat_trace.series("A").mean
    assert school_a[-1] > school_a[0]
    assert np.all(school_a <= 28.39)


def test_infinity_references(sat, sat_trace):
    assert np.array_equal(sat_trace.infinity_study, sat.y)
    assert sat_trace.infinity_contrast[0] == pytest.approx(8.82)


def test_single_study_trace_is_constant():
    data = Dataset(labels=("only",), y=[0.4], s=[0.2])
    trace = compute_trace(data, DesignMatrix.intercept_only(1), grid_points=21)
    assert trace.bottom_panel is None
    assert np.allclose(trace.study_traces[0].mean, 0.4, atol=1e-12)


def test_prior_does_not_change_traces(aspirin, aspirin_halfnormal):
    design = DesignMatrix.intercept_only(aspirin.k)
    flat = compute_trace(aspirin, design, [MU], BayesMode(UniformPrior()), tau_upper=1.0)
    informative = compute_trace(aspirin, design, [MU], BayesMode(HalfNormalPrior(0.5), posterior=aspirin_halfnormal), tau_upper=1.0)
    likelihood = compute_trace(aspirin, design, [MU], FreqMode("reml"), tau_upper=1.0)
    for other in (informative, likelihood):
        for a, b in zip(flat.study_traces + flat.contrast_traces, other.study_traces + other.contrast_traces):
            assert np.array_equal(a.mean, b.mean)
            assert np.array_equal(a.sd, b.sd)
    assert informative.bottom_panel.prior_density is not None
    assert flat.bottom_panel.prior_density is None


def test_prediction_trace_widens_with_tau(sat):
    trace = compute_trace(sat, DesignMatrix.intercept_only(sat.k), [MU, Prediction([1.0])], tau_upper=20.0)
    mu, new = trace.series("mu"), trace.series("prediction")
    assert np.array_equal(mu.mean, new.mean)
    assert new.sd[0] == pytest.approx(mu.sd[0])
    assert np.all(new.sd[1:] > mu.sd[1:])


@pytest.mark.parametrize("points", [0, 5, 20])
def test_grid_too_small(sat, points):
    with pytest.raises(InputError):
        compute_trace(sat, DesignMatrix.intercept_only(sat.k), grid_points=points)


def test_freq_panel(sat):
    trace = compute_trace(sat, DesignMatrix.intercept_only(sat.k), [MU], FreqMode("reml"))
    panel = trace.bottom_panel
    assert panel.estimator == "reml"
    assert panel.q_values[0] == pytest.approx(4.563261, abs=1e-5)
    assert np.all(np.diff(panel.q_values) < 0)
    assert panel.chi2_band[0] < panel.chi2_band[1]


def test_nice_ticks():
    assert nice_ticks(0.0, 10.0) == [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]
    assert nice_ticks(-0.3, 0.7) == [-0.2, 0.0, 0.2, 0.4, 0.6]
    assert nice_ticks(1.0, 1.0) == [1.0]


# CSV export


def test_csv_layout(sat_trace):
    text = export_trace_csv(sat_trace)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["tau", "series", "kind", "mean", "sd"]
    body = rows[1:]
    assert len(body) == 9 * 201 + 201
    assert [row[1] for row in body[:9]] == list("ABCDEFGH") + ["mu"]
    assert {row[2] for row in body} == {"study", "contrast", "panel"}
    panel_rows = [row for row in body if row[2] == "panel"]
    assert {row[1] for row in panel_rows} == {"posterior_density"}
    assert all(row[4] == "" for row in panel_rows)


def test_csv_numbers_round_trip_exactly(sat_trace):
    rows = list(csv.reader(io.StringIO(export_trace_csv(sat_trace))))[1:]
    school_b = [row for row in rows if row[1] == "B"]
    assert np.array_equal([float(row[3]) for row in school_b], sat_trace.series("B").mean)
    assert np.array_equal([float(row[0]) for row in school_b], sat_trace.tau_grid)


def test_csv_includes_proper_prior(aspirin, aspirin_halfnormal):
    mode = BayesMode(HalfNormalPrior(0.5), posterior=aspirin_halfnormal)
    trace = compute_trace(aspirin, DesignMatrix.intercept_only(aspirin.k), mode=mode)
    rows = list(csv.reader(io.StringIO(export_trace_csv(trace))))[1:]
    assert sum(1 for row in rows if row[1] == "prior_density") == 201


# SVG rendering


def test_trace_svg_structure(sat_trace):
    text = render_trace_svg(sat_trace, TraceOptions(title="SAT coaching"))
    assert text.startswith("<?xml")
    assert text.endswith("</svg>\n")
    assert text.count('class="study"') == 8
    assert text.count('class="contrast"') == 1
    assert text.count('class="posterior"') == 1
    assert 'class="prior"' not in text
    assert 'class="ci"' in text
    assert "τ=∞" in text
    assert "SAT coaching" in text


def test_trace_svg_is_deterministic(sat, sat_trace):
    design = DesignMatrix.intercept_only(sat.k)
    again = compute_trace(sat, design, [MU], BayesMode(UniformPrior()))
    assert render_trace_svg(again) == render_trace_svg(sat_trace)


def test_bands(sat_trace):
    text = render_trace_svg(sat_trace, TraceOptions(bands=("A",)))
    assert text.count('class="band"') == 2
    with pytest.raises(UnknownLabelError):
        render_trace_svg(sat_trace, TraceOptions(bands=("Z",)))


def test_infinity_contrast_ticks_stay_inside_panel(sat_trace):
    far = replace(sat_trace, infinity_contrast=np.array([500.0]))
    text = render_trace_svg(far)
    ticks = re.findall(r'<line x1="[^"]+" y1="([^"]+)" x2="[^"]+" y2="[^"]+" stroke="black" stroke-dasharray="1,2"/>', text)
    assert len(ticks) == 1
    assert TRACE_TOP <= float(ticks[0]) <= TRACE_BOTTOM


def test_freq_trace_svg(sat):
    trace = compute_trace(sat, DesignMatrix.intercept_only(sat.k), [MU], FreqMode("ml"))
    text = render_trace_svg(trace)
    assert text.count('class="q"') == 1
    assert text.count('class="chi2"') == 2


def test_forest_plots(sat, sat_posterior):
    plain = render_forest_svg(sat)
    assert plain.count('class="raw"') == 8
    assert 'class="shrinkage"' not in plain

    marginals = [marginal_effect(sat_posterior, i) for i in range(sat.k)]
    overall = marginal_effect(sat_posterior, MU)
    text = render_forest_svg(sat, marginals, overall, marginal_effect(sat_posterior, Prediction([1.0])))
    assert text.count('class="shrinkage"') == 8
    assert 'class="overall"' in text and 'class="prediction"' in text

    with pytest.raises(DimensionError):
        render_forest_svg(sat, marginals[:3])


def test_forest_with_blup_summaries(aspirin):
    result = blup(aspirin, DesignMatrix.intercept_only(aspirin.k), "reml")
    marginals = [blup_summary(result, aspirin, i) for i in range(aspirin.k)]
    text = render_forest_svg(aspirin, marginals, blup_summary(result, aspirin, MU))
    assert text.count('class="shrinkage"') == aspirin.k
