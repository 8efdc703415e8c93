"""
models/dataset.py

Input-side domain types: the study data, the design matrix built from it,
and the linear contrasts and prediction targets evaluated on a fit.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from rapidfuzz import fuzz, process
from scipy import linalg

from errors import DatasetError, DimensionError, InputError, RankDeficientError, UnknownLabelError

# relative Cholesky pivot below which a column counts as collinear
PIVOT_TOLERANCE = 1e-10


def suggest_similar(name: str, candidates: Sequence[str], limit: int = 3) -> List[str]:
    """Closest matches for `name` among `candidates`, best first."""
    matches = process.extract(name, list(candidates), scorer=fuzz.WRatio, limit=limit, score_cutoff=60)
    return [match for match, _score, _idx in matches]


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise DatasetError(f"'{name}' must be one-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Effect estimates y_i with known standard errors s_i for k studies,
    plus optional study-level covariate columns.
    """

    labels: Tuple[str, ...]
    y: np.ndarray
    s: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        y = _frozen(self.y, "y")
        s = _frozen(self.s, "se")
        k = len(labels)
        if k < 1:
            raise DatasetError("dataset has no studies")
        if len(y) != k or len(s) != k:
            raise DatasetError(f"labels, y and se must have equal length (got {k}, {len(y)}, {len(s)})")

        seen = set()
        for i, label in enumerate(labels):
            if label in seen:
                raise DatasetError(f"duplicate label '{label}'", row=i + 1)
            seen.add(label)
        for i in range(k):
            if not math.isfinite(y[i]):
                raise DatasetError(f"effect estimate of '{labels[i]}' is not finite", row=i + 1)
            if not math.isfinite(s[i]) or s[i] <= 0:
                raise DatasetError(f"standard error of '{labels[i]}' must be positive and finite", row=i + 1)

        covariates: Dict[str, np.ndarray] = {}
        for name, column in self.covariates.items():
            col = _frozen(column, name)
            if len(col) != k:
                raise DatasetError(f"covariate '{name}' has {len(col)} values, expected {k}")
            bad = np.flatnonzero(~np.isfinite(col))
            if bad.size:
                raise DatasetError(f"covariate '{name}' is not finite", row=int(bad[0]) + 1)
            covariates[name] = col

        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "covariates", covariates)

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def covariate_names(self) -> List[str]:
        return list(self.covariates)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabelError("study", label, suggest_similar(label, self.labels)) from None

    def covariate(self, name: str) -> np.ndarray:
        if name not in self.covariates:
            raise UnknownLabelError("covariate", name, suggest_similar(name, self.covariate_names))
        return self.covariates[name]

    def without(self, label: str) -> "Dataset":
        """A copy of the dataset with the study `label` removed."""
        drop = self.index_of(label)
        keep = [i for i in range(self.k) if i != drop]
        return Dataset(
            labels=tuple(self.labels[i] for i in keep),
            y=self.y[keep],
            s=self.s[keep],
            covariates={name: col[keep] for name, col in self.covariates.items()},
        )

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.labels == other.labels
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.s, other.s)
            and self.covariates.keys() == other.covariates.keys()
            and all(np.array_equal(col, other.covariates[name]) for name, col in self.covariates.items())
        )


def collinear_columns(X: np.ndarray, labels: Sequence[str]) -> List[str]:
    """
    Columns of X that are (numerically) linear combinations of earlier ones.
    Columns are scaled to unit norm, then added one at a time; a column whose
    Cholesky pivot falls below PIVOT_TOLERANCE is reported.
    """
    norms = np.sqrt(np.sum(X * X, axis=0))
    kept: List[int] = []
    collinear: List[str] = []
    for j in range(X.shape[1]):
        if norms[j] == 0:
            collinear.append(labels[j])
            continue
        cols = kept + [j]
        Z = X[:, cols] / norms[cols]
        try:
            L = linalg.cholesky(Z.T @ Z, lower=True)
        except linalg.LinAlgError:
            collinear.append(labels[j])
            continue
        if L[-1, -1] ** 2 < PIVOT_TOLERANCE:
            collinear.append(labels[j])
        else:
            kept.append(j)
    return collinear


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """k x p covariate matrix with one label per column."""

    X: np.ndarray
    column_labels: Tuple[str, ...]

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("design matrix must be two-dimensional")
        labels = tuple(self.column_labels)
        k, p = X.shape
        if len(labels) != p:
            raise DimensionError(f"{p} design columns but {len(labels)} column labels")
        if p < 1:
            raise DimensionError("design matrix needs at least one column")
        if k < p:
            raise DimensionError(f"{p} regression coefficients cannot be estimated from {k} studies")
        collinear = collinear_columns(X, labels)
        if collinear:
            raise RankDeficientError(collinear)
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_labels", labels)

    @property
    def k(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def is_intercept_only(self) -> bool:
        return self.p == 1 and bool(np.all(self.X == 1.0))

    @classmethod
    def intercept_only(cls, k: int) -> "DesignMatrix":
        return cls(np.ones((k, 1)), ("intercept",))

    @classmethod
    def from_covariates(cls, data: Dataset, names: Sequence[str] = ()) -> "DesignMatrix":
        """Intercept plus the named covariate columns, in the given order."""
        if not names:
            return cls.intercept_only(data.k)
        if len(set(names)) != len(names):
            raise InputError(f"regression formula repeats a covariate: {', '.join(names)}")
        columns = [np.ones(data.k)] + [data.covariate(name) for name in names]
        return cls(np.column_stack(columns), ("intercept", *names))

    def subset_rows(self, keep: Sequence[int]) -> "DesignMatrix":
        return DesignMatrix(self.X[list(keep)], self.column_labels)

    def row_for(self, values: Mapping[str, float]) -> np.ndarray:
        """Design row for a hypothetical study with the given covariate values."""
        missing = [name for name in self.column_labels[1:] if name not in values]
        if missing and not self.is_intercept_only:
            raise InputError(f"no value given for covariate(s): {', '.join(missing)}")
        extra = [name for name in values if name not in self.column_labels]
        if extra:
            raise UnknownLabelError("covariate", extra[0], suggest_similar(extra[0], self.column_labels[1:]))
        return np.array([1.0] + [float(values[name]) for name in self.column_labels[1:]])


@dataclass(frozen=True, eq=False)
class Contrast:
    """Linear combination c'beta of the regression coefficients."""

    c: np.ndarray
    label: str

    def __post_init__(self):
        c = _frozen(self.c, "contrast")
        if c.size == 0 or not np.any(c != 0):
            raise InputError(f"contrast '{self.label}' needs at least one nonzero entry")
        if not np.all(np.isfinite(c)):
            raise InputError(f"contrast '{self.label}' has non-finite entries")
        object.__setattr__(self, "c", c)

    @classmethod
    def unit(cls, p: int, j: int, label: str) -> "Contrast":
        c = np.zeros(p)
        c[j] = 1.0
        return cls(c, label)


@dataclass(frozen=True, eq=False)
class Prediction:
    """Effect in a new, hypothetical study with design row `x_new`."""

    x_new: np.ndarray
    label: str = "prediction"

    def __post_init__(self):
        object.__setattr__(self, "x_new", _frozen(self.x_new, "x_new"))


def default_contrasts(design: DesignMatrix) -> List[Contrast]:
    """mu for a plain meta-analysis, one unit contrast per coefficient otherwise."""
    if design.is_intercept_only:
        return [Contrast(np.ones(1), "mu")]
    return [Contrast.unit(design.p, j, label) for j, label in enumerate(design.column_labels)]


def check_length(vector: np.ndarray, p: int, what: str) -> None:
    if len(vector) != p:
        raise DimensionError(f"{what} has length {len(vector)}, design has {p} columns")

