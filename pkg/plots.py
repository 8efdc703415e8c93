"""
plots.py

Trace plots (conditional estimates as functions of tau, with a tau-inference
panel underneath), forest plots and the long-format CSV export of a trace.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DimensionError, DomainError, InputError, UnknownLabelError
from frequentist import blup, q_band
from models.dataset import Contrast, Dataset, DesignMatrix, Prediction, suggest_similar
from models.results import BayesPanel, FreqPanel, FreqResult, MarginalSummary, SeriesTrace, TraceData
from nnhm import conditional_contrast, gls_fits, infinite_tau_limits, predict_new_study
from posterior import TauPosterior, build_posterior
from priors import HeterogeneityPrior
from svg import SVG

logger = logging.getLogger(__name__)

MIN_GRID_POINTS = 21
DEFAULT_GRID_POINTS = 201

WIDTH, HEIGHT = 800, 600
PLOT_LEFT, PLOT_RIGHT = 70.0, 690.0
TRACE_TOP, TRACE_BOTTOM = 30.0, 394.0
PANEL_TOP, PANEL_BOTTOM = 414.0, 570.0

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
)
SHADE = "#d9d9d9"


@dataclass(frozen=True)
class BayesMode:
    prior: HeterogeneityPrior
    interval_method: str = "shortest"
    posterior: Optional[TauPosterior] = None


@dataclass(frozen=True)
class FreqMode:
    estimator: str = "reml"
    result: Optional[FreqResult] = None


Mode = Union[BayesMode, FreqMode, None]
TraceTarget = Union[Contrast, Prediction]


@dataclass(frozen=True)
class TraceOptions:
    bands: Sequence[str] = field(default_factory=tuple)
    title: Optional[str] = None


def _axis_upper(data: Dataset, mode_result, tau_upper: Optional[float]) -> float:
    if tau_upper is not None:
        if not math.isfinite(tau_upper) or tau_upper <= 0:
            raise DomainError(f"tau axis upper limit must be positive, got {tau_upper}")
        return float(tau_upper)
    upper = 0.0
    if isinstance(mode_result, TauPosterior):
        upper = max(mode_result.quantile(0.995), 1.5 * mode_result.median)
    elif isinstance(mode_result, FreqResult):
        upper = max(1.1 * mode_result.tau_ci95.hi, 1.5 * mode_result.tau_hat)
    if upper <= 0:
        upper = float(np.max(data.s))
    return upper


def compute_trace(
    data: Dataset,
    design: DesignMatrix,
    contrasts: Sequence[TraceTarget] = (),
    mode: Mode = None,
    grid_points: int = DEFAULT_GRID_POINTS,
    tau_upper: Optional[float] = None,
    workers: Optional[int] = None,
) -> TraceData:
    """
    Evaluate every study and contrast trace on an equally spaced tau grid
    starting at 0. The bottom panel holds the posterior (and proper prior)
    density for BayesMode and Q(tau) for FreqMode; mode None gives traces only.
    """
    if grid_points < MIN_GRID_POINTS:
        raise InputError(f"trace grid needs at least {MIN_GRID_POINTS} points, got {grid_points}")

    mode_result = None
    if isinstance(mode, BayesMode):
        mode_result = mode.posterior or build_posterior(data, design, mode.prior, mode.interval_method, workers)
    elif isinstance(mode, FreqMode):
        mode_result = mode.result or blup(data, design, mode.estimator)

    upper = _axis_upper(data, mode_result, tau_upper)
    grid = np.linspace(0.0, upper, grid_points)
    logger.debug("trace grid: %d points on [0, %g]", grid_points, upper)
    fits = gls_fits(data, design, grid, workers=workers)

    theta_mean = np.array([fit.theta_mean for fit in fits])
    theta_sd = np.array([fit.theta_sd for fit in fits])
    study_traces = [SeriesTrace(label, theta_mean[:, i], theta_sd[:, i]) for i, label in enumerate(data.labels)]

    y_inf, beta_inf = infinite_tau_limits(data, design)
    contrast_traces = []
    contrast_inf = []
    for target in contrasts:
        if isinstance(target, Contrast):
            pairs = np.array([conditional_contrast(fit, target) for fit in fits])
            contrast_inf.append(float(target.c @ beta_inf))
        else:
            pairs = np.array([predict_new_study(fit, target.x_new) for fit in fits])
            contrast_inf.append(float(np.asarray(target.x_new, dtype=float) @ beta_inf))
        contrast_traces.append(SeriesTrace(target.label, pairs[:, 0], pairs[:, 1]))

    panel = None
    if isinstance(mode_result, TauPosterior):
        prior = mode_result.prior
        posterior_density = np.array(
            [math.exp(prior.log_density(fit.tau) + fit.log_marg_lik - mode_result.log_norm_const) for fit in fits]
        )
        prior_density = np.array([prior.density(t) for t in grid]) if prior.proper else None
        panel = BayesPanel(posterior_density, prior_density, mode_result.median, mode_result.ci95)
    elif isinstance(mode_result, FreqResult):
        ci = mode_result.tau_ci95
        panel = FreqPanel(
            q_values=np.array([fit.q_gls for fit in fits]),
            chi2_band=q_band(ci.dof, ci.level),
            tau_hat=mode_result.tau_hat,
            tau_ci95=(ci.lo, ci.hi),
            estimator=mode_result.estimator,
        )

    return TraceData(
        tau_grid=grid,
        study_traces=study_traces,
        contrast_traces=contrast_traces,
        bottom_panel=panel,
        infinity_study=y_inf,
        infinity_contrast=np.array(contrast_inf),
    )


def nice_ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    """Round tick positions (steps of 1, 2 or 5 times a power of ten) inside [lo, hi]."""
    if not hi > lo:
        return [lo]
    raw = (hi - lo) / count
    magnitude = 10.0 ** math.floor(math.log10(raw))
    step = next(m * magnitude for m in (1.0, 2.0, 5.0, 10.0) if m * magnitude >= raw)
    first = math.ceil(lo / step - 1e-9)
    last = math.floor(hi / step + 1e-9)
    return [round(i * step, 12) for i in range(first, last + 1)]


def _fmt_tick(value: float) -> str:
    return f"{value:g}"


class _Scale:
    def __init__(self, lo: float, hi: float, out_lo: float, out_hi: float):
        if not hi > lo:
            lo, hi = lo - 1.0, hi + 1.0
        self.lo, self.hi = lo, hi
        self.out_lo, self.out_hi = out_lo, out_hi

    def __call__(self, value: float) -> float:
        return self.out_lo + (value - self.lo) / (self.hi - self.lo) * (self.out_hi - self.out_lo)


def _padded(lo: float, hi: float, fraction: float = 0.05) -> Tuple[float, float]:
    pad = (hi - lo) * fraction if hi > lo else 1.0
    return lo - pad, hi + pad


def _x_axis(doc: SVG, xs: _Scale, y: float, labels: bool):
    for tick in nice_ticks(xs.lo, xs.hi):
        x = xs(tick)
        doc.line(x, y, x, y + 4, "black")
        if labels:
            doc.string_ttf(x, y + 16, _fmt_tick(tick), {"font-size": "11", "text-anchor": "middle"})


def _y_axis(doc: SVG, ys: _Scale, x: float):
    for tick in nice_ticks(ys.lo, ys.hi):
        y = ys(tick)
        doc.line(x - 4, y, x, y, "black")
        doc.string_ttf(x - 6, y + 4, _fmt_tick(tick), {"font-size": "11", "text-anchor": "end"})


def _check_bands(trace: TraceData, bands: Sequence[str]) -> None:
    known = [t.label for t in trace.study_traces + trace.contrast_traces]
    for label in bands:
        if label not in known:
            raise UnknownLabelError("series", label, suggest_similar(label, known))


def render_trace_svg(trace: TraceData, options: Optional[TraceOptions] = None) -> str:
    options = options or TraceOptions()
    _check_bands(trace, options.bands)
    highlighted = set(options.bands)
    series = trace.study_traces + trace.contrast_traces

    lows, highs = [], []
    for item in series:
        lower, upper = item.mean, item.mean
        if item.label in highlighted:
            lower, upper = item.mean - 1.96 * item.sd, item.mean + 1.96 * item.sd
        lows.append(float(np.min(lower)))
        highs.append(float(np.max(upper)))
    for limits in (trace.infinity_study, trace.infinity_contrast):
        if len(limits):
            lows.append(float(np.min(limits)))
            highs.append(float(np.max(limits)))

    xs = _Scale(0.0, float(trace.tau_grid[-1]), PLOT_LEFT, PLOT_RIGHT)
    ys = _Scale(*_padded(min(lows), max(highs)), TRACE_BOTTOM, TRACE_TOP)

    doc = SVG()
    doc.header(WIDTH, HEIGHT)
    if options.title:
        doc.string_ttf(WIDTH / 2, 18, options.title, {"font-size": "14", "text-anchor": "middle"})

    doc.group_start({"class": "traces"})
    doc.filled_rectangle(PLOT_LEFT, TRACE_TOP, PLOT_RIGHT, TRACE_BOTTOM, "none", {"stroke": "black"})
    _x_axis(doc, xs, TRACE_BOTTOM, labels=False)
    _y_axis(doc, ys, PLOT_LEFT)
    doc.string_ttf(18, (TRACE_TOP + TRACE_BOTTOM) / 2, "effect", {"font-size": "12", "text-anchor": "middle", "transform": f"rotate(-90 18 {(TRACE_TOP + TRACE_BOTTOM) / 2:.2f})"})

    taus = trace.tau_grid
    for index, item in enumerate(series):
        is_contrast = index >= len(trace.study_traces)
        color = "black" if is_contrast else PALETTE[index % len(PALETTE)]
        kind = "contrast" if is_contrast else "study"
        style = {"class": kind, "stroke-width": "2.5" if is_contrast else "1.5"}
        if highlighted and item.label not in highlighted:
            style["stroke-opacity"] = "0.3"
        doc.group_start(title=item.label)
        doc.polyline(zip([xs(t) for t in taus], [ys(m) for m in item.mean]), color, style)
        if item.label in highlighted:
            for sign in (-1.0, 1.0):
                bound = item.mean + sign * 1.96 * item.sd
                doc.polyline(
                    zip([xs(t) for t in taus], [ys(b) for b in bound]),
                    color,
                    {"class": "band", "stroke-dasharray": "2,3"},
                )
        doc.group_end()

    # tau = infinity references at the right edge
    doc.group_start({"class": "infinity"})
    doc.string_ttf(PLOT_RIGHT + 12, TRACE_TOP - 6, "τ=∞", {"font-size": "11"})
    for index, (label, value) in enumerate(zip((t.label for t in trace.study_traces), trace.infinity_study)):
        y = ys(float(value))
        doc.line(PLOT_RIGHT, y, PLOT_RIGHT + 10, y, PALETTE[index % len(PALETTE)], {"stroke-dasharray": "1,2"})
        doc.string_ttf(PLOT_RIGHT + 14, y + 4, label, {"font-size": "10"})
    for label, value in zip((t.label for t in trace.contrast_traces), trace.infinity_contrast):
        y = ys(float(value))
        doc.line(PLOT_RIGHT, y, PLOT_RIGHT + 10, y, "black", {"stroke-dasharray": "1,2"})
        doc.string_ttf(PLOT_RIGHT + 14, y + 4, label, {"font-size": "10", "font-weight": "bold"})
    doc.group_end()
    doc.group_end()

    doc.group_start({"class": "panel"})
    doc.filled_rectangle(PLOT_LEFT, PANEL_TOP, PLOT_RIGHT, PANEL_BOTTOM, "none", {"stroke": "black"})
    if isinstance(trace.bottom_panel, BayesPanel):
        _bayes_panel(doc, trace, trace.bottom_panel, xs)
    elif isinstance(trace.bottom_panel, FreqPanel):
        _freq_panel(doc, trace, trace.bottom_panel, xs)
    _x_axis(doc, xs, PANEL_BOTTOM, labels=True)
    doc.string_ttf((PLOT_LEFT + PLOT_RIGHT) / 2, HEIGHT - 2, "heterogeneity τ", {"font-size": "12", "text-anchor": "middle"})
    doc.group_end()
    return doc.get_svg()


def _bayes_panel(doc: SVG, trace: TraceData, panel: BayesPanel, xs: _Scale):
    taus = trace.tau_grid
    peak = float(np.max(panel.posterior_density))
    ys = _Scale(0.0, peak if peak > 0 else 1.0, PANEL_BOTTOM, PANEL_TOP + 6)

    lo, hi = panel.ci95
    inside = (taus > lo) & (taus < hi)
    edge_lo = float(np.interp(lo, taus, panel.posterior_density))
    edge_hi = float(np.interp(hi, taus, panel.posterior_density))
    shade = [(xs(lo), ys(0.0)), (xs(lo), ys(edge_lo))]
    shade += [(xs(t), ys(d)) for t, d in zip(taus[inside], panel.posterior_density[inside])]
    shade += [(xs(min(hi, taus[-1])), ys(edge_hi)), (xs(min(hi, taus[-1])), ys(0.0))]
    doc.polygon(shade, SHADE, {"class": "ci"})

    doc.polyline(zip([xs(t) for t in taus], [ys(d) for d in panel.posterior_density]), "black", {"class": "posterior"})
    if panel.prior_density is not None:
        clipped = np.minimum(panel.prior_density, ys.hi)
        doc.polyline(
            zip([xs(t) for t in taus], [ys(d) for d in clipped]),
            "black",
            {"class": "prior", "stroke-dasharray": "6,4"},
        )
    if panel.median <= taus[-1]:
        doc.line(xs(panel.median), PANEL_TOP, xs(panel.median), PANEL_BOTTOM, "black", {"class": "median"})
    doc.string_ttf(PLOT_LEFT - 6, (PANEL_TOP + PANEL_BOTTOM) / 2, "posterior", {"font-size": "11", "text-anchor": "end"})


def _freq_panel(doc: SVG, trace: TraceData, panel: FreqPanel, xs: _Scale):
    taus = trace.tau_grid
    top = max(float(np.max(panel.q_values)), panel.chi2_band[1])
    ys = _Scale(0.0, top * 1.05, PANEL_BOTTOM, PANEL_TOP)

    lo, hi = panel.tau_ci95
    hi = min(hi, float(taus[-1]))
    if hi > lo:
        doc.filled_rectangle(xs(lo), PANEL_TOP, xs(hi), PANEL_BOTTOM, SHADE, {"class": "ci"})
    for level in panel.chi2_band:
        doc.line(PLOT_LEFT, ys(level), PLOT_RIGHT, ys(level), "gray", {"class": "chi2", "stroke-dasharray": "2,3"})
    doc.polyline(zip([xs(t) for t in taus], [ys(q) for q in panel.q_values]), "black", {"class": "q"})
    if panel.tau_hat <= taus[-1]:
        doc.line(xs(panel.tau_hat), PANEL_TOP, xs(panel.tau_hat), PANEL_BOTTOM, "black", {"class": "median"})
    _y_axis(doc, ys, PLOT_LEFT)
    doc.string_ttf(PLOT_LEFT - 30, PANEL_TOP + 10, "Q", {"font-size": "12", "text-anchor": "end"})


def render_forest_svg(
    data: Dataset,
    marginals: Optional[Sequence[MarginalSummary]] = None,
    overall: Optional[MarginalSummary] = None,
    prediction: Optional[MarginalSummary] = None,
    title: Optional[str] = None,
) -> str:
    """
    Forest plot of the raw estimates y_i +/- 1.96 s_i; with `marginals`, each
    study also gets its shrinkage interval, and optional overall-mean and
    prediction rows are appended.
    """
    if marginals is not None and len(marginals) != data.k:
        raise DimensionError(f"got {len(marginals)} marginal summaries for {data.k} studies")

    raw = [(float(y - 1.96 * s), float(y), float(y + 1.96 * s)) for y, s in zip(data.y, data.s)]
    summaries = [m for m in [overall, prediction] if m is not None] + list(marginals or [])
    lows = [r[0] for r in raw] + [m.ci95[0] for m in summaries]
    highs = [r[2] for r in raw] + [m.ci95[1] for m in summaries]

    extra_rows = sum(1 for m in (overall, prediction) if m is not None)
    row_height = 26.0
    top = 50.0
    height = int(top + row_height * (data.k + extra_rows + 1) + 40)
    left, right = 170.0, 560.0
    xs = _Scale(*_padded(min(lows), max(highs)), left, right)

    doc = SVG()
    doc.header(WIDTH, height)
    if title:
        doc.string_ttf(WIDTH / 2, 20, title, {"font-size": "14", "text-anchor": "middle"})
    doc.string_ttf(right + 20, top - 14, "estimate [95% interval]", {"font-size": "11"})

    axis_y = top + row_height * (data.k + extra_rows + 0.5)
    if xs.lo < 0 < xs.hi:
        doc.line(xs(0.0), top - 10, xs(0.0), axis_y, "gray", {"stroke-dasharray": "3,3"})

    for i, label in enumerate(data.labels):
        y = top + row_height * i
        lo, mid, hi = raw[i]
        doc.group_start({"class": "study"}, title=label)
        doc.string_ttf(left - 10, y + 4, label, {"font-size": "12", "text-anchor": "end"})
        doc.line(xs(lo), y, xs(hi), y, "black", {"class": "raw"})
        doc.filled_rectangle(xs(mid) - 3, y - 3, xs(mid) + 3, y + 3, "black")
        text = f"{mid:.2f} [{lo:.2f}, {hi:.2f}]"
        if marginals is not None:
            m = marginals[i]
            doc.line(xs(m.ci95[0]), y + 7, xs(m.ci95[1]), y + 7, "gray", {"class": "shrinkage", "stroke-width": "2"})
            doc.circle(xs(m.median), y + 7, 3, "gray")
        doc.string_ttf(right + 20, y + 4, text, {"font-size": "11"})
        doc.group_end()

    row = data.k
    for summary, kind in ((overall, "overall"), (prediction, "prediction")):
        if summary is None:
            continue
        y = top + row_height * row
        lo, hi = summary.ci95
        doc.group_start({"class": kind}, title=summary.target)
        doc.string_ttf(left - 10, y + 4, summary.target, {"font-size": "12", "text-anchor": "end", "font-weight": "bold"})
        if kind == "overall":
            doc.polygon([(xs(lo), y), (xs(summary.median), y - 6), (xs(hi), y), (xs(summary.median), y + 6)], "black")
        else:
            doc.filled_rectangle(xs(lo), y - 3, xs(hi), y + 3, "gray")
        doc.string_ttf(right + 20, y + 4, f"{summary.median:.2f} [{lo:.2f}, {hi:.2f}]", {"font-size": "11"})
        doc.group_end()
        row += 1

    doc.line(left, axis_y, right, axis_y, "black")
    _x_axis(doc, xs, axis_y, labels=True)
    return doc.get_svg()


def _g17(value: float) -> str:
    return format(float(value), ".17g")


def export_trace_csv(trace: TraceData) -> str:
    """
    Long-format CSV with header tau,series,kind,mean,sd. Panel rows carry the
    curve value in `mean` and leave `sd` empty.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["tau", "series", "kind", "mean", "sd"])
    for j, tau in enumerate(trace.tau_grid):
        for item in trace.study_traces:
            writer.writerow([_g17(tau), item.label, "study", _g17(item.mean[j]), _g17(item.sd[j])])
        for item in trace.contrast_traces:
            writer.writerow([_g17(tau), item.label, "contrast", _g17(item.mean[j]), _g17(item.sd[j])])

    panel = trace.bottom_panel
    curves = []
    if isinstance(panel, BayesPanel):
        curves.append(("posterior_density", panel.posterior_density))
        if panel.prior_density is not None:
            curves.append(("prior_density", panel.prior_density))
    elif isinstance(panel, FreqPanel):
        curves.append(("q_statistic", panel.q_values))
    for name, values in curves:
        for tau, value in zip(trace.tau_grid, values):
            writer.writerow([_g17(tau), name, "panel", _g17(value), ""])
    return buffer.getvalue()
