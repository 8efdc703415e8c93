"""
models/results.py

Output-side domain types: the conditional slice at a fixed tau, marginal
summaries, frequentist results and the numerical content of a trace plot.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

Interval = Tuple[float, float]


@dataclass(frozen=True, eq=False)
class ConditionalFit:
    """Everything known about the model at one fixed heterogeneity value."""

    tau: float
    beta_hat: np.ndarray
    V_beta: np.ndarray
    weights: np.ndarray
    shrink_factor: np.ndarray
    fitted: np.ndarray
    theta_mean: np.ndarray
    theta_sd: np.ndarray
    log_marg_lik: float
    q_gls: float

    @property
    def p(self) -> int:
        return len(self.beta_hat)


@dataclass(frozen=True)
class MarginalSummary:
    target: str
    mean: float
    sd: float
    median: float
    ci95: Interval


@dataclass(frozen=True)
class QProfileInterval:
    """Q-profile confidence bounds for tau; `degenerate` when no root exists for either bound."""

    lo: float
    hi: float
    level: float
    dof: int
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class FreqResult:
    tau_hat: float
    estimator: str
    tau_ci95: QProfileInterval
    fit_at_hat: ConditionalFit
    q_at_zero: float


@dataclass(frozen=True, eq=False)
class SeriesTrace:
    """Conditional mean and sd of one study or contrast along the tau grid."""

    label: str
    mean: np.ndarray
    sd: np.ndarray


@dataclass(frozen=True, eq=False)
class BayesPanel:
    posterior_density: np.ndarray
    prior_density: Optional[np.ndarray]
    median: float
    ci95: Interval


@dataclass(frozen=True, eq=False)
class FreqPanel:
    q_values: np.ndarray
    chi2_band: Interval
    tau_hat: float
    tau_ci95: Interval
    estimator: str


@dataclass(frozen=True, eq=False)
class TraceData:
    tau_grid: np.ndarray
    study_traces: List[SeriesTrace]
    contrast_traces: List[SeriesTrace]
    bottom_panel: Optional[Union[BayesPanel, FreqPanel]]
    infinity_study: np.ndarray
    infinity_contrast: np.ndarray

    @property
    def grid_len(self) -> int:
        return len(self.tau_grid)

    def series(self, label: str) -> SeriesTrace:
        for trace in self.study_traces + self.contrast_traces:
            if trace.label == label:
                return trace
        raise KeyError(label)
