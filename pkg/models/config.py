"""
models/config.py

Settings for one analysis run, assembled from command-line flags with
environment defaults.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from errors import InputError

MODES = ("bayes", "freq")
OUTPUT_KINDS = ("report", "trace", "forest", "csv", "dataforest")
DEFAULT_OUTPUTS = ("report", "trace", "forest", "csv")


@dataclass(frozen=True)
class AnalysisConfig:
    mode: str = "bayes"
    prior: str = "uniform"
    estimator: str = "reml"
    regression: Tuple[str, ...] = ()
    contrasts: Tuple[str, ...] = ()
    predictions: Tuple[str, ...] = ()
    exclude: Optional[str] = None
    interval: str = "shortest"
    outputs: Tuple[str, ...] = DEFAULT_OUTPUTS
    out_dir: Path = field(default_factory=lambda: Path("out"))
    grid_points: int = 201
    tau_max: Optional[float] = None
    bands: Tuple[str, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {', '.join(MODES)}, got '{self.mode}'")
        if self.mode == "bayes" and not self.prior:
            raise InputError("bayes mode needs a prior")
        if self.mode == "freq" and not self.estimator:
            raise InputError("freq mode needs an estimator")
        unknown = [kind for kind in self.outputs if kind not in OUTPUT_KINDS]
        if unknown:
            raise InputError(f"unknown output kind(s): {', '.join(unknown)}; choose from {', '.join(OUTPUT_KINDS)}")
        if self.workers < 1:
            raise InputError(f"workers must be at least 1, got {self.workers}")
