"""
posterior.py

Heterogeneity posterior p(tau | y) proportional to p(tau) * p(y | tau), and
marginal (tau-averaged) summaries for study effects, contrasts and
predictions.

The posterior is represented by the accepted panels of an adaptive Simpson
rule on [0, tau_max]. Panel nodes double as the quadrature grid for
marginalization: every marginal is a finite mixture of normals, one
component per node.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import optimize, special

from errors import ConvergenceError, DomainError, ImproperPosteriorError, InputError, ModelError
from models.dataset import Contrast, Dataset, DesignMatrix, Prediction
from models.results import ConditionalFit, Interval, MarginalSummary
from nnhm import conditional_contrast, conditional_theta, gls_fit, gls_fits, predict_new_study
from priors import HeterogeneityPrior
from quadrature import SimpsonPanels, adaptive_simpson

logger = logging.getLogger(__name__)

INTERVAL_METHODS = ("shortest", "central")

# support search: integrand at tau_max relative to its maximum, and allowed tail mass
SUPPORT_CUTOFF = math.log(1e-12)
TAIL_MASS = 1e-4
MAX_DOUBLINGS = 80
INITIAL_PANELS = 200

Target = Union[Contrast, Prediction, int, str]


def _check_level(level: float) -> float:
    level = float(level)
    if not 0 < level < 1:
        raise DomainError(f"interval level must lie in (0, 1), got {level}")
    return level


def _check_method(method: str) -> str:
    if method not in INTERVAL_METHODS:
        raise InputError(f"interval method must be one of {', '.join(INTERVAL_METHODS)}, got '{method}'")
    return method


def shortest_interval(quantile: Callable[[float], float], level: float, bounded_below: bool) -> Interval:
    """
    Minimal-width interval of posterior mass `level`, searching over the left
    tail mass alpha in [0, 1 - level]. With `bounded_below` the boundary
    candidate alpha = 0 (interval starting at the support's lower end) is
    also considered.
    """

    def width(alpha: float) -> float:
        return quantile(alpha + level) - quantile(alpha)

    result = optimize.minimize_scalar(width, bounds=(0.0, 1.0 - level), method="bounded", options={"xatol": 1e-10})
    alpha, best = float(result.x), float(result.fun)
    if bounded_below and width(0.0) <= best:
        alpha = 0.0
    return quantile(alpha), quantile(alpha + level)


class NormalMixture:
    """Finite mixture of normals with fixed weights."""

    def __init__(self, weights: np.ndarray, means: np.ndarray, sds: np.ndarray):
        self.weights = weights
        self.means = means
        self.sds = np.maximum(sds, np.finfo(float).tiny)

    @cached_property
    def mean(self) -> float:
        return float(np.sum(self.weights * self.means))

    @cached_property
    def sd(self) -> float:
        second = float(np.sum(self.weights * (self.sds ** 2 + self.means ** 2)))
        return math.sqrt(max(second - self.mean ** 2, 0.0))

    def cdf(self, x: float) -> float:
        return float(np.sum(self.weights * special.ndtr((x - self.means) / self.sds)))

    def quantile(self, q: float) -> float:
        spread = max(self.sd, float(np.max(self.sds)) * 1e-6)
        lo, hi = self.mean - 10.0 * spread, self.mean + 10.0 * spread
        for _ in range(60):
            if self.cdf(lo) <= q:
                break
            lo -= 10.0 * spread
        for _ in range(60):
            if self.cdf(hi) >= q:
                break
            hi += 10.0 * spread
        if self.cdf(lo) >= q:
            return lo
        if self.cdf(hi) <= q:
            return hi
        return float(optimize.bisect(lambda x: self.cdf(x) - q, lo, hi, xtol=1e-13 * (hi - lo)))


@dataclass(frozen=True, eq=False)
class TauPosterior:
    """
    Normalized heterogeneity posterior. `grid_tau`/`grid_weight` are the
    quadrature nodes and normalized weights (summing to one); `panels` hold
    the unnormalized integrand for density and CDF evaluation.
    """

    data: Dataset
    design: DesignMatrix
    prior: HeterogeneityPrior
    log_norm_const: float
    log_shift: float
    tau_max: float
    panels: SimpsonPanels
    grid_tau: np.ndarray
    grid_weight: np.ndarray
    interval_method: str = "shortest"
    workers: Optional[int] = None

    def log_unnormalized(self, tau: float) -> float:
        return self.prior.log_density(tau) + gls_fit(self.data, self.design, tau).log_marg_lik

    def density(self, tau: float) -> float:
        tau = float(tau)
        if tau < 0:
            raise DomainError(f"tau must be nonnegative, got {tau}")
        return math.exp(self.log_unnormalized(tau) - self.log_norm_const)

    def cdf(self, tau: float) -> float:
        tau = float(tau)
        if tau <= 0:
            return 0.0
        if tau >= self.tau_max:
            return 1.0
        return min(max(self.panels.partial_integral(tau) / self.panels.integral, 0.0), 1.0)

    def _quantile(self, q: float) -> float:
        if q <= 0:
            return 0.0
        if q >= 1:
            return self.tau_max
        return float(optimize.brentq(lambda t: self.cdf(t) - q, 0.0, self.tau_max, xtol=1e-13 * self.tau_max, rtol=1e-14))

    def quantile(self, q: float) -> float:
        q = float(q)
        if not 0 < q < 1:
            raise DomainError(f"quantile level must lie in (0, 1), got {q}")
        return self._quantile(q)

    def credible_interval(self, level: float = 0.95, method: Optional[str] = None) -> Interval:
        level = _check_level(level)
        method = _check_method(method or self.interval_method)
        if method == "central":
            alpha = 1.0 - level
            return self._quantile(alpha / 2.0), self._quantile(1.0 - alpha / 2.0)
        return shortest_interval(self._quantile, level, bounded_below=True)

    @cached_property
    def median(self) -> float:
        return self._quantile(0.5)

    @cached_property
    def ci95(self) -> Interval:
        return self.credible_interval(0.95)

    @cached_property
    def mean(self) -> float:
        return float(np.sum(self.grid_weight * self.grid_tau))

    @cached_property
    def mode(self) -> float:
        nodes, _weights, values = self.panels.nodes_and_weights()
        return float(nodes[int(np.argmax(values))])

    @cached_property
    def conditional_fits(self) -> List[ConditionalFit]:
        return gls_fits(self.data, self.design, self.grid_tau, workers=self.workers)


def _check_propriety(data: Dataset, design: DesignMatrix, prior: HeterogeneityPrior) -> None:
    if data.k < 2:
        raise ModelError(f"a heterogeneity posterior needs at least 2 studies, got {data.k}")
    if not prior.proper and data.k - design.p < 2:
        raise ImproperPosteriorError(
            f"the {prior.kind} prior gives an improper posterior with k - p = {data.k - design.p} "
            "(the marginal likelihood decays like tau^-(k-p)); at least 2 residual degrees of freedom "
            "are needed, otherwise use a proper prior such as halfnormal:<scale>"
        )


def _support_upper(logf: Callable[[float], float], start: float) -> Tuple[float, float]:
    """Double tau_max until the integrand there is below 1e-12 of its maximum."""
    upper = start
    for _ in range(MAX_DOUBLINGS):
        values = [logf(float(t)) for t in np.linspace(0.0, upper, 201)]
        peak = max(values)
        if values[-1] - peak < SUPPORT_CUTOFF:
            return upper, peak
        upper *= 2.0
    raise ConvergenceError(f"could not bound the posterior support (tau_max > {upper:g})")


def build_posterior(
    data: Dataset,
    design: DesignMatrix,
    prior: HeterogeneityPrior,
    interval_method: str = "shortest",
    workers: Optional[int] = None,
) -> TauPosterior:
    if design.k != data.k:
        raise InputError(f"design matrix has {design.k} rows, dataset has {data.k} studies")
    _check_method(interval_method)
    _check_propriety(data, design, prior)

    cache: Dict[float, float] = {}

    def logf(tau: float) -> float:
        if tau not in cache:
            cache[tau] = prior.log_density(tau) + gls_fit(data, design, tau).log_marg_lik
        return cache[tau]

    start = float(np.max(data.s))
    if prior.scale_hint:
        start = max(start, prior.scale_hint)
    tau_max, peak = _support_upper(logf, start)

    def integrand(tau: float) -> float:
        return math.exp(logf(tau) - peak)

    panels = adaptive_simpson(integrand, 0.0, tau_max, initial_panels=INITIAL_PANELS)
    for _ in range(8):
        try:
            tail = adaptive_simpson(integrand, tau_max, 8.0 * tau_max, initial_panels=50, rel_tol=1e-6).integral
        except ConvergenceError:
            # integrand underflows to zero beyond tau_max
            tail = 0.0
        if tail < TAIL_MASS * panels.integral:
            break
        logger.warning("posterior tail mass beyond tau=%g is %.3g; extending support", tau_max, tail / panels.integral)
        tau_max *= 8.0
        panels = adaptive_simpson(integrand, 0.0, tau_max, initial_panels=INITIAL_PANELS)

    norm = panels.integral
    nodes, weights, values = panels.nodes_and_weights()
    grid_weight = weights * values / norm
    logger.debug("tau posterior: tau_max=%g, %d grid nodes, %d integrand evaluations", tau_max, len(nodes), len(cache))

    posterior = TauPosterior(
        data=data,
        design=design,
        prior=prior,
        log_norm_const=peak + math.log(norm),
        log_shift=peak,
        tau_max=tau_max,
        panels=panels,
        grid_tau=nodes,
        grid_weight=grid_weight,
        interval_method=interval_method,
        workers=workers,
    )
    logger.info("tau posterior median %.4g, 95%% CI [%.4g, %.4g]", posterior.median, *posterior.ci95)
    return posterior


def _target_moments(posterior: TauPosterior, target: Target) -> Tuple[str, np.ndarray, np.ndarray]:
    fits = posterior.conditional_fits
    if isinstance(target, str):
        target = posterior.data.index_of(target)
    if isinstance(target, (int, np.integer)) and not isinstance(target, bool):
        index = int(target)
        if not 0 <= index < posterior.data.k:
            raise DomainError(f"study index {index} out of range 0..{posterior.data.k - 1}")
        pairs = [conditional_theta(fit, index) for fit in fits]
        label = posterior.data.labels[index]
    elif isinstance(target, Contrast):
        pairs = [conditional_contrast(fit, target) for fit in fits]
        label = target.label
    elif isinstance(target, Prediction):
        pairs = [predict_new_study(fit, target.x_new) for fit in fits]
        label = target.label
    else:
        raise InputError(f"unsupported marginal target {target!r}")
    arr = np.array(pairs)
    return label, arr[:, 0], arr[:, 1]


def marginal_effect(
    posterior: TauPosterior,
    target: Target,
    level: float = 0.95,
    method: Optional[str] = None,
) -> MarginalSummary:
    """
    Conditional normal summaries averaged over the tau posterior; `target` is
    a study index or label, a Contrast or a Prediction.
    """
    level = _check_level(level)
    method = _check_method(method or posterior.interval_method)
    label, means, sds = _target_moments(posterior, target)
    mixture = NormalMixture(posterior.grid_weight, means, sds)
    if method == "central":
        alpha = 1.0 - level
        interval = (mixture.quantile(alpha / 2.0), mixture.quantile(1.0 - alpha / 2.0))
    else:
        interval = shortest_interval(mixture.quantile, level, bounded_below=False)
    return MarginalSummary(
        target=label,
        mean=mixture.mean,
        sd=mixture.sd,
        median=mixture.quantile(0.5),
        ci95=(float(interval[0]), float(interval[1])),
    )


def leave_one_out(
    data: Dataset,
    design: DesignMatrix,
    prior: HeterogeneityPrior,
    excluded: str,
    interval_method: str = "shortest",
    workers: Optional[int] = None,
) -> TauPosterior:
    """Posterior for the dataset with study `excluded` removed."""
    drop = data.index_of(excluded)
    keep = [i for i in range(data.k) if i != drop]
    return build_posterior(data.without(excluded), design.subset_rows(keep), prior, interval_method, workers)
