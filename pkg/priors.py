"""
priors.py

Heterogeneity priors p(tau) on [0, inf). New families only need a
log_density, a `proper` flag and a `scale_hint` for the posterior's support
search.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from errors import DomainError, InputError
from models.dataset import Dataset


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if math.isnan(tau) or tau < 0:
        raise DomainError(f"tau must be nonnegative, got {tau}")
    return tau


def _check_scale(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise InputError(f"{name} must be positive and finite, got {value}")
    return value


class HeterogeneityPrior:
    """Base class; subclasses define log_density (up to a constant for improper priors)."""

    proper: bool = True
    kind: str = ""

    def log_density(self, tau: float) -> float:
        raise NotImplementedError

    def density(self, tau: float) -> float:
        return math.exp(self.log_density(tau))

    def quantile(self, q: float) -> float:
        raise InputError(f"{self.kind} prior has no quantiles")

    @property
    def scale_hint(self) -> Optional[float]:
        return None

    @property
    def spec(self) -> str:
        return self.kind


@dataclass(frozen=True)
class UniformPrior(HeterogeneityPrior):
    proper = False
    kind = "uniform"

    def log_density(self, tau: float) -> float:
        _check_tau(tau)
        return 0.0


@dataclass(frozen=True)
class HalfNormalPrior(HeterogeneityPrior):
    scale: float
    kind = "halfnormal"

    def __post_init__(self):
        object.__setattr__(self, "scale", _check_scale(self.scale, "half-normal scale"))

    def log_density(self, tau: float) -> float:
        tau = _check_tau(tau)
        return math.log(2.0 / (self.scale * math.sqrt(2.0 * math.pi))) - tau * tau / (2.0 * self.scale * self.scale)

    def quantile(self, q: float) -> float:
        if not 0 < q < 1:
            raise DomainError(f"quantile level must lie in (0, 1), got {q}")
        return float(stats.halfnorm.ppf(q, scale=self.scale))

    @property
    def scale_hint(self) -> float:
        return self.scale

    @property
    def spec(self) -> str:
        return f"halfnormal:{self.scale:g}"


@dataclass(frozen=True)
class DuMouchelPrior(HeterogeneityPrior):
    """Log-logistic prior p(tau) = s0 / (s0 + tau)^2."""

    s0: float
    kind = "dumouchel"

    def __post_init__(self):
        object.__setattr__(self, "s0", _check_scale(self.s0, "DuMouchel scale"))

    def log_density(self, tau: float) -> float:
        tau = _check_tau(tau)
        return math.log(self.s0) - 2.0 * math.log(self.s0 + tau)

    def quantile(self, q: float) -> float:
        # CDF is tau / (s0 + tau)
        if not 0 < q < 1:
            raise DomainError(f"quantile level must lie in (0, 1), got {q}")
        return self.s0 * q / (1.0 - q)

    @property
    def scale_hint(self) -> float:
        return self.s0

    @property
    def spec(self) -> str:
        return f"dumouchel:{self.s0:.17g}"


def log_density(prior: HeterogeneityPrior, tau: float) -> float:
    return prior.log_density(tau)


def dumouchel_default_scale(data: Dataset) -> float:
    """Harmonic-mean scale s0 = sqrt(k / sum(s_i^-2))."""
    return math.sqrt(data.k / float(np.sum(1.0 / data.s ** 2)))
