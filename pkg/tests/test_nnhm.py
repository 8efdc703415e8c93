import math

import numpy as np
import pytest
from scipy import integrate, stats

from errors import DimensionError, DomainError, RankDeficientError
from models.dataset import Contrast, Dataset, DesignMatrix
from nnhm import conditional_contrast, conditional_theta, gls_fit, gls_fits, infinite_tau_limits, predict_new_study


def test_two_equal_studies_closed_form(toy2):
    fit = gls_fit(toy2, DesignMatrix.intercept_only(2), 1.0)
    assert fit.beta_hat == pytest.approx([1.0])
    assert fit.V_beta == pytest.approx(np.array([[1.0]]))
    assert fit.shrink_factor == pytest.approx([0.5, 0.5])
    assert fit.theta_mean == pytest.approx([0.5, 1.5])
    assert fit.theta_sd == pytest.approx([math.sqrt(0.75)] * 2)
    assert fit.q_gls == pytest.approx(1.0)
    assert conditional_theta(fit, 1) == pytest.approx((1.5, math.sqrt(0.75)))


def test_common_effect_at_zero(sat):
    fit = gls_fit(sat, DesignMatrix.intercept_only(sat.k), 0.0)
    assert fit.beta_hat[0] == pytest.approx(7.9, abs=0.05)
    assert np.all(fit.shrink_factor == 1.0)
    assert fit.theta_mean == pytest.approx(fit.fitted, abs=1e-12)


def test_limits_for_large_tau(sat):
    fit = gls_fit(sat, DesignMatrix.intercept_only(sat.k), 1e7)
    assert fit.theta_mean == pytest.approx(sat.y, rel=1e-6)
    assert fit.theta_sd == pytest.approx(sat.s, rel=1e-6)


@pytest.mark.parametrize("tau", [0.0, 0.5, 3.0, 20.0])
def test_conditional_sd_below_standard_error(sat, tau):
    fit = gls_fit(sat, DesignMatrix.intercept_only(sat.k), tau)
    assert np.all(fit.theta_sd < sat.s)
    assert fit.q_gls >= 0


@pytest.mark.parametrize("tau", [0.0, 0.7, 4.0])
def test_marginal_likelihood_matches_numeric_integration(toy3, tau):
    fit = gls_fit(toy3, DesignMatrix.intercept_only(3), tau)
    sd = np.sqrt(toy3.s ** 2 + tau ** 2)

    def joint(mu):
        return float(np.prod(stats.norm.pdf(toy3.y, loc=mu, scale=sd)))

    value, _ = integrate.quad(joint, -30, 30, epsabs=1e-14)
    assert fit.log_marg_lik == pytest.approx(math.log(value), abs=1e-8)


def test_gls_matches_weighted_least_squares(grouped):
    design = DesignMatrix.from_covariates(grouped, ["x"])
    tau = 0.1
    w = 1.0 / (grouped.s ** 2 + tau ** 2)
    sw = np.sqrt(w)
    expected, *_ = np.linalg.lstsq(design.X * sw[:, None], grouped.y * sw, rcond=None)
    fit = gls_fit(grouped, design, tau)
    assert fit.beta_hat == pytest.approx(expected, abs=1e-12)


def test_binary_covariate_gives_two_pooled_values(grouped):
    fit = gls_fit(grouped, DesignMatrix.from_covariates(grouped, ["x"]), 0.0)
    assert len(np.unique(np.round(fit.theta_mean, 12))) == 2


def test_parallel_fits_are_bit_identical(sat):
    design = DesignMatrix.intercept_only(sat.k)
    taus = np.linspace(0, 30, 57)
    serial = gls_fits(sat, design, taus)
    threaded = gls_fits(sat, design, taus, workers=4)
    for a, b in zip(serial, threaded):
        assert a.tau == b.tau
        assert np.array_equal(a.theta_mean, b.theta_mean)
        assert a.log_marg_lik == b.log_marg_lik


def test_contrast_and_prediction(toy2):
    fit = gls_fit(toy2, DesignMatrix.intercept_only(2), 1.0)
    mean, sd = conditional_contrast(fit, Contrast([1.0], "mu"))
    assert (mean, sd) == pytest.approx((1.0, 1.0))
    mean, sd = predict_new_study(fit, [1.0])
    assert (mean, sd) == pytest.approx((1.0, math.sqrt(2.0)))
    with pytest.raises(DimensionError):
        conditional_contrast(fit, Contrast([1.0, 0.0], "bad"))


def test_infinite_limits(sat, grouped):
    y, beta = infinite_tau_limits(sat, DesignMatrix.intercept_only(sat.k))
    assert np.array_equal(y, sat.y)
    assert beta[0] == pytest.approx(float(np.mean(sat.y)))

    _, beta = infinite_tau_limits(grouped, DesignMatrix.from_covariates(grouped, ["x"]))
    assert beta == pytest.approx([0.2, 0.5667 - 0.2], abs=1e-3)


def test_rank_deficient_design_names_columns(grouped):
    x = grouped.covariate("x")
    with pytest.raises(RankDeficientError) as excinfo:
        DesignMatrix(np.column_stack([np.ones(6), x, 2 * x]), ("intercept", "x", "x2"))
    assert "x2" in excinfo.value.columns


def test_more_columns_than_studies(toy2):
    with pytest.raises(DimensionError):
        DesignMatrix(np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]), ("intercept", "a", "b"))


@pytest.mark.parametrize("tau", [-1.0, float("nan"), float("inf")])
def test_invalid_tau(toy2, tau):
    with pytest.raises(DomainError):
        gls_fit(toy2, DesignMatrix.intercept_only(2), tau)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(labels=("a", "a"), y=[0.0, 1.0], s=[1.0, 1.0])
    with pytest.raises(ValueError):
        Dataset(labels=("a", "b"), y=[0.0, 1.0], s=[1.0, 0.0])
