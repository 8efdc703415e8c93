"""
Parses the small text grammars used on the command line into model objects:
prior specifications, contrast vectors, covariate-value predictions and
comma-separated lists.
"""

import logging
import math
from typing import List, Tuple

from errors import InputError, UnknownLabelError
from models.dataset import Contrast, Dataset, DesignMatrix, Prediction, check_length, suggest_similar
from priors import DuMouchelPrior, HalfNormalPrior, HeterogeneityPrior, UniformPrior, dumouchel_default_scale

logger = logging.getLogger(__name__)

PRIOR_FAMILIES = ("uniform", "halfnormal", "dumouchel")


def split_list(text: str) -> List[str]:
    """'a, b,,c' -> ['a', 'b', 'c']"""
    return [item.strip() for item in (text or "").split(",") if item.strip()]


def _float(text: str, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"{what} is not a number: '{text}'") from None
    if not math.isfinite(value):
        raise InputError(f"{what} must be finite, got '{text}'")
    return value


def parse_prior(spec: str, data: Dataset) -> HeterogeneityPrior:
    """
    Parses a prior specification:
      uniform | halfnormal:<scale> | dumouchel | dumouchel:<s0>
    A bare `dumouchel` uses the harmonic-mean scale of the standard errors.
    """
    family, _, argument = (spec or "").strip().partition(":")
    family = family.strip().lower()
    argument = argument.strip()

    if family == "uniform":
        if argument:
            raise InputError(f"the uniform prior takes no parameter, got '{spec}'")
        return UniformPrior()
    if family == "halfnormal":
        if not argument:
            raise InputError("the half-normal prior needs a scale, e.g. halfnormal:0.5")
        return HalfNormalPrior(_float(argument, "half-normal scale"))
    if family == "dumouchel":
        if argument:
            return DuMouchelPrior(_float(argument, "DuMouchel scale"))
        s0 = dumouchel_default_scale(data)
        logger.info("DuMouchel prior scale set to the harmonic-mean standard error %.6g", s0)
        return DuMouchelPrior(s0)
    raise UnknownLabelError("prior", family, suggest_similar(family, PRIOR_FAMILIES))


def parse_contrast(text: str, design: DesignMatrix) -> Contrast:
    """'label:c1,c2,...' with one coefficient per design column."""
    label, sep, values = text.partition(":")
    if not sep or not label.strip():
        raise InputError(f"contrast must look like 'label:c1,c2,...', got '{text}'")
    coefficients = [_float(v, f"contrast '{label.strip()}' entry") for v in split_list(values)]
    contrast = Contrast(coefficients, label.strip())
    check_length(contrast.c, design.p, f"contrast '{contrast.label}'")
    return contrast


def _assignments(text: str) -> List[Tuple[str, float]]:
    pairs = []
    for item in split_list(text):
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise InputError(f"prediction must look like 'covariate=value', got '{item}'")
        pairs.append((name.strip(), _float(value.strip(), f"value of '{name.strip()}'")))
    return pairs


def parse_prediction(text: str, design: DesignMatrix) -> Prediction:
    """'fev1=1.5' or 'gender=1,smoke=0'; labelled by its own text."""
    pairs = _assignments(text)
    names = [name for name, _ in pairs]
    if len(set(names)) != len(names):
        raise InputError(f"prediction repeats a covariate: '{text}'")
    row = design.row_for(dict(pairs))
    label = "prediction" if not pairs else f"prediction {','.join(f'{n}={v:g}' for n, v in pairs)}"
    return Prediction(row, label)


def parse_regression(text: str) -> Tuple[str, ...]:
    """Comma-separated covariate names; empty means intercept only."""
    return tuple(split_list(text))
