"""
nnhm.py

Closed-form conditional inference for the normal-normal hierarchical model
at a fixed heterogeneity tau, with a flat prior on the regression
coefficients:

    theta_i ~ Normal(x_i' beta, tau^2),    y_i ~ Normal(theta_i, s_i^2)

All functions are pure; a ConditionalFit is one vertical slice of a trace plot.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy import linalg

from errors import DimensionError, DomainError, RankDeficientError
from models.dataset import PIVOT_TOLERANCE, Contrast, Dataset, DesignMatrix, check_length, collinear_columns
from models.results import ConditionalFit

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not math.isfinite(tau) or tau < 0:
        raise DomainError(f"tau must be finite and nonnegative, got {tau}")
    return tau


def _check_shapes(data: Dataset, design: DesignMatrix) -> None:
    if design.k != data.k:
        raise DimensionError(f"design matrix has {design.k} rows, dataset has {data.k} studies")


def gls_fit(data: Dataset, design: DesignMatrix, tau: float) -> ConditionalFit:
    """
    Conditional posterior (equivalently, GLS/BLUP) quantities at a fixed tau.

    beta_hat = (X'WX)^-1 X'Wy with W = diag(1 / (s_i^2 + tau^2)); the study
    effects are shrunk towards their fitted values with factor
    B_i = s_i^2 / (s_i^2 + tau^2). The log marginal likelihood integrates
    beta out under a flat prior.
    """
    tau = _check_tau(tau)
    _check_shapes(data, design)
    X, y = design.X, data.y
    k, p = X.shape

    s2 = data.s ** 2
    total_var = s2 + tau * tau
    w = 1.0 / total_var

    XtW = X.T * w
    A = XtW @ X
    try:
        L = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError:
        raise RankDeficientError(collinear_columns(X, design.column_labels)) from None
    pivots = np.diag(L) ** 2
    if np.any(pivots < PIVOT_TOLERANCE * np.max(np.diag(A))):
        bad = [design.column_labels[j] for j in np.flatnonzero(pivots < PIVOT_TOLERANCE * np.max(np.diag(A)))]
        raise RankDeficientError(bad)

    beta = linalg.cho_solve((L, True), XtW @ y)
    V = linalg.cho_solve((L, True), np.eye(p))
    V = 0.5 * (V + V.T)

    fitted = X @ beta
    resid = y - fitted
    q = float(np.sum(w * resid * resid))

    B = s2 / total_var
    theta_mean = (1.0 - B) * y + B * fitted
    leverage = np.einsum("ij,jk,ik->i", X, V, X)
    theta_var = s2 * (tau * tau) / total_var + B * B * leverage

    log_det_A = 2.0 * float(np.sum(np.log(np.diag(L))))
    log_marg_lik = -0.5 * ((k - p) * LOG_2PI + float(np.sum(np.log(total_var))) + log_det_A + q)

    return ConditionalFit(
        tau=tau,
        beta_hat=beta,
        V_beta=V,
        weights=w,
        shrink_factor=B,
        fitted=fitted,
        theta_mean=theta_mean,
        theta_sd=np.sqrt(theta_var),
        log_marg_lik=log_marg_lik,
        q_gls=q,
    )


def gls_fits(data: Dataset, design: DesignMatrix, taus: Iterable[float], workers: Optional[int] = None) -> List[ConditionalFit]:
    """gls_fit over a list of tau values; order (and every bit) is independent of `workers`."""
    taus = [float(t) for t in taus]
    if not workers or workers <= 1 or len(taus) < 2:
        return [gls_fit(data, design, t) for t in taus]
    logger.debug("evaluating %d conditional fits on %d workers", len(taus), workers)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda t: gls_fit(data, design, t), taus))


def conditional_contrast(fit: ConditionalFit, contrast: Contrast) -> Tuple[float, float]:
    """Conditional mean and sd of c'beta."""
    check_length(contrast.c, fit.p, f"contrast '{contrast.label}'")
    c = contrast.c
    mean = float(c @ fit.beta_hat)
    sd = math.sqrt(max(float(c @ fit.V_beta @ c), 0.0))
    return mean, sd


def conditional_theta(fit: ConditionalFit, index: int) -> Tuple[float, float]:
    """Conditional mean and sd of the i-th study effect."""
    return float(fit.theta_mean[index]), float(fit.theta_sd[index])


def predict_new_study(fit: ConditionalFit, x_new) -> Tuple[float, float]:
    """Effect in a new study with design row x_new: x'beta with variance x'Vx + tau^2."""
    x = np.asarray(x_new, dtype=float)
    check_length(x, fit.p, "prediction row")
    mean = float(x @ fit.beta_hat)
    sd = math.sqrt(max(float(x @ fit.V_beta @ x), 0.0) + fit.tau * fit.tau)
    return mean, sd


def infinite_tau_limits(data: Dataset, design: DesignMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic tau -> infinity limits: each study's effect tends to y_i and the
    coefficients to the unweighted least-squares fit (the arithmetic mean for
    an intercept-only design).
    """
    _check_shapes(data, design)
    if design.is_intercept_only:
        beta = np.array([float(np.mean(data.y))])
    else:
        beta, *_ = np.linalg.lstsq(design.X, data.y, rcond=None)
    return np.array(data.y, dtype=float), beta
