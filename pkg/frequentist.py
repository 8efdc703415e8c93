"""
frequentist.py

Likelihood-based counterpart of the Bayesian analysis: ML, REML and
DerSimonian-Laird estimates of tau, the Q-profile confidence interval and
BLUP (GLS at the point estimate) summaries.
"""

import logging
import math
from typing import Callable, Iterable, Optional, Tuple

import numpy as np
from scipy import optimize, special, stats

from errors import ConvergenceError, DomainError, InputError, UnsupportedDesignError
from models.dataset import Contrast, Dataset, DesignMatrix, Prediction
from models.results import FreqResult, MarginalSummary, QProfileInterval
from nnhm import LOG_2PI, conditional_contrast, gls_fit, gls_fits, predict_new_study

logger = logging.getLogger(__name__)

ESTIMATORS = ("reml", "ml", "dl")

COARSE_POINTS = 201
MAX_DOUBLINGS = 80


def _check_dof(data: Dataset, design: DesignMatrix) -> int:
    if design.k != data.k:
        raise InputError(f"design matrix has {design.k} rows, dataset has {data.k} studies")
    dof = data.k - design.p
    if dof < 1:
        raise InputError(f"need at least one residual degree of freedom, got k - p = {dof}")
    return dof


def _check_estimator(estimator: str) -> str:
    estimator = estimator.lower()
    if estimator not in ESTIMATORS:
        raise InputError(f"estimator must be one of {', '.join(ESTIMATORS)}, got '{estimator}'")
    return estimator


def log_likelihood(data: Dataset, design: DesignMatrix, tau: float, estimator: str = "reml") -> float:
    """Restricted (coefficient-integrated) or full profile log-likelihood at tau."""
    fit = gls_fit(data, design, tau)
    if estimator == "reml":
        return fit.log_marg_lik
    return -0.5 * (data.k * LOG_2PI - float(np.sum(np.log(fit.weights))) + fit.q_gls)


def _scale(data: Dataset) -> float:
    spread = float(np.max(data.y) - np.min(data.y))
    return max(float(np.max(data.s)), spread)


def _maximize(objective: Callable[[float], float], start: float) -> float:
    """
    Maximize a one-dimensional objective on [0, inf): a coarse grid whose
    upper end doubles while the best node sits on it, then bounded Brent
    (golden section with parabolic steps) around the best node.
    """
    upper = start
    for _ in range(MAX_DOUBLINGS):
        grid = np.linspace(0.0, upper, COARSE_POINTS)
        values = np.array([objective(float(t)) for t in grid])
        best = int(np.argmax(values))
        if best < COARSE_POINTS - 1:
            break
        upper *= 2.0
    else:
        raise ConvergenceError(f"objective still increasing at tau = {upper:g}")

    lo = float(grid[max(best - 1, 0)])
    hi = float(grid[min(best + 1, COARSE_POINTS - 1)])
    logger.debug("tau optimizer bracket [%g, %g]", lo, hi)
    result = optimize.minimize_scalar(
        lambda t: -objective(t), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * upper}
    )
    tau_hat, value = float(result.x), -float(result.fun)
    # boundary solution when the profile is decreasing at zero
    if objective(0.0) >= value:
        return 0.0
    return tau_hat


def dersimonian_laird(data: Dataset) -> float:
    w = 1.0 / data.s ** 2
    mean = float(np.sum(w * data.y) / np.sum(w))
    q0 = float(np.sum(w * (data.y - mean) ** 2))
    denom = float(np.sum(w) - np.sum(w ** 2) / np.sum(w))
    if denom <= 0:
        return 0.0
    return math.sqrt(max(0.0, (q0 - (data.k - 1)) / denom))


def estimate_tau(data: Dataset, design: DesignMatrix, estimator: str = "reml") -> float:
    estimator = _check_estimator(estimator)
    _check_dof(data, design)
    if estimator == "dl":
        if not design.is_intercept_only:
            raise UnsupportedDesignError(
                "the DerSimonian-Laird estimator is only available for intercept-only designs; use reml or ml"
            )
        tau_hat = dersimonian_laird(data)
    else:
        tau_hat = _maximize(lambda t: log_likelihood(data, design, t, estimator), _scale(data))
    logger.info("%s estimate of tau: %.6g", estimator.upper(), tau_hat)
    return tau_hat


def q_statistic(data: Dataset, design: DesignMatrix, tau: float) -> float:
    return gls_fit(data, design, tau).q_gls


def q_profile(data: Dataset, design: DesignMatrix, taus: Iterable[float], workers: Optional[int] = None) -> np.ndarray:
    """Q(tau) along a grid."""
    return np.array([fit.q_gls for fit in gls_fits(data, design, taus, workers=workers)])


def chi2_quantile(q: float, dof: int) -> float:
    """
    Inverse chi-squared CDF: Wilson-Hilferty start refined by Newton steps on
    the regularized incomplete gamma function.
    """
    q = float(q)
    if not 0 < q < 1:
        raise DomainError(f"chi-squared quantile level must lie in (0, 1), got {q}")
    if int(dof) != dof or dof < 1:
        raise DomainError(f"chi-squared degrees of freedom must be a positive integer, got {dof}")
    dof = int(dof)
    half = 0.5 * dof

    h = 2.0 / (9.0 * dof)
    x = dof * (1.0 - h + float(special.ndtri(q)) * math.sqrt(h)) ** 3
    if not x > 0:
        x = float(stats.chi2.ppf(q, dof))

    for _ in range(100):
        resid = float(special.gammainc(half, 0.5 * x)) - q
        density = float(stats.chi2.pdf(x, dof))
        if density <= 0:
            break
        step = resid / density
        new = x - step
        if new <= 0:
            new = 0.5 * x
        if abs(new - x) <= 1e-14 * max(1.0, x):
            return new
        x = new
    if abs(float(special.gammainc(half, 0.5 * x)) - q) < 1e-12:
        return x
    logger.debug("Newton refinement did not settle for q=%g, dof=%d; using scipy ppf", q, dof)
    return float(stats.chi2.ppf(q, dof))


def profile_upper_bound(data: Dataset, design: DesignMatrix, target: float) -> float:
    """Smallest doubling of the data scale at which Q(tau) drops below target."""
    upper = _scale(data)
    for _ in range(MAX_DOUBLINGS):
        if q_statistic(data, design, upper) < target:
            return upper
        upper *= 2.0
    raise ConvergenceError(f"Q(tau) still above {target:g} at tau = {upper:g}")


def _solve_q(data: Dataset, design: DesignMatrix, target: float) -> float:
    if q_statistic(data, design, 0.0) <= target:
        return 0.0
    upper = profile_upper_bound(data, design, target)
    return float(
        optimize.bisect(lambda t: q_statistic(data, design, t) - target, 0.0, upper, xtol=1e-14 * upper, rtol=1e-15)
    )


def q_profile_ci(data: Dataset, design: DesignMatrix, level: float = 0.95) -> QProfileInterval:
    """
    Q-profile confidence interval: bounds solve Q(tau) = chi2 quantiles with
    k - p degrees of freedom, truncated to 0 where Q(0) is already below the
    target.
    """
    if not 0 < level < 1:
        raise DomainError(f"confidence level must lie in (0, 1), got {level}")
    dof = _check_dof(data, design)
    alpha = 1.0 - level
    lo = _solve_q(data, design, chi2_quantile(1.0 - alpha / 2.0, dof))
    hi = _solve_q(data, design, chi2_quantile(alpha / 2.0, dof))
    degenerate = hi == 0.0
    if degenerate:
        logger.warning("Q-profile interval is degenerate: Q(0) is below the lower chi-squared target, reporting [0, 0]")
    return QProfileInterval(lo=lo, hi=hi, level=level, dof=dof, degenerate=degenerate)


def blup(data: Dataset, design: DesignMatrix, estimator: str = "reml", level: float = 0.95) -> FreqResult:
    tau_hat = estimate_tau(data, design, estimator)
    return FreqResult(
        tau_hat=tau_hat,
        estimator=estimator.lower(),
        tau_ci95=q_profile_ci(data, design, level),
        fit_at_hat=gls_fit(data, design, tau_hat),
        q_at_zero=q_statistic(data, design, 0.0),
    )


def _normal_summary(label: str, mean: float, sd: float, level: float) -> MarginalSummary:
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    return MarginalSummary(target=label, mean=mean, sd=sd, median=mean, ci95=(mean - z * sd, mean + z * sd))


def blup_summary(result: FreqResult, data: Dataset, target, level: float = 0.95) -> MarginalSummary:
    """
    Point estimate and normal confidence interval at tau_hat for a study
    (index or label), a Contrast or a Prediction.
    """
    fit = result.fit_at_hat
    if isinstance(target, str):
        target = data.index_of(target)
    if isinstance(target, (int, np.integer)) and not isinstance(target, bool):
        index = int(target)
        if not 0 <= index < data.k:
            raise DomainError(f"study index {index} out of range 0..{data.k - 1}")
        return _normal_summary(data.labels[index], float(fit.theta_mean[index]), float(fit.theta_sd[index]), level)
    if isinstance(target, Contrast):
        mean, sd = conditional_contrast(fit, target)
    elif isinstance(target, Prediction):
        mean, sd = predict_new_study(fit, target.x_new)
    else:
        raise InputError(f"unsupported summary target {target!r}")
    return _normal_summary(target.label, mean, sd, level)


def q_band(dof: int, level: float = 0.95) -> Tuple[float, float]:
    """Central chi-squared region drawn behind the Q(tau) curve."""
    alpha = 1.0 - level
    return chi2_quantile(alpha / 2.0, dof), chi2_quantile(1.0 - alpha / 2.0, dof)
