"""
quadrature.py

Composite adaptive Simpson rule that keeps its accepted panels, so the same
nodes and weights can be reused for mixtures and the piecewise-quadratic
interpolant gives a CDF consistent with the integral.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Tuple

import numpy as np

from errors import ConvergenceError, DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SimpsonPanels:
    """Accepted Simpson panels [left, right] with midpoint values, ordered left to right."""

    left: np.ndarray
    mid: np.ndarray
    right: np.ndarray
    f_left: np.ndarray
    f_mid: np.ndarray
    f_right: np.ndarray

    @cached_property
    def masses(self) -> np.ndarray:
        return (self.right - self.left) / 6.0 * (self.f_left + 4.0 * self.f_mid + self.f_right)

    @cached_property
    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.masses)])

    @property
    def integral(self) -> float:
        return float(self.cumulative[-1])

    def nodes_and_weights(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct nodes (increasing), their Simpson weights and function values."""
        h6 = (self.right - self.left) / 6.0
        nodes = np.concatenate([self.left, self.mid, self.right])
        weights = np.concatenate([h6, 4.0 * h6, h6])
        values = np.concatenate([self.f_left, self.f_mid, self.f_right])
        unique, inverse = np.unique(nodes, return_inverse=True)
        summed = np.zeros(len(unique))
        np.add.at(summed, inverse, weights)
        f_unique = np.zeros(len(unique))
        f_unique[inverse] = values
        return unique, summed, f_unique

    def partial_integral(self, x: float) -> float:
        """Integral of the piecewise-quadratic interpolant from left[0] to x."""
        if x <= self.left[0]:
            return 0.0
        if x >= self.right[-1]:
            return self.integral
        j = int(np.searchsorted(self.left, x, side="right")) - 1
        before = float(self.cumulative[j])
        h = self.right[j] - self.left[j]
        u = (x - self.left[j]) / h
        u2, u3 = u * u, u * u * u
        # integrals of the Lagrange basis on (0, 0.5, 1) from 0 to u
        i0 = 2.0 / 3.0 * u3 - 1.5 * u2 + u
        i1 = -4.0 / 3.0 * u3 + 2.0 * u2
        i2 = 2.0 / 3.0 * u3 - 0.5 * u2
        return before + h * (self.f_left[j] * i0 + self.f_mid[j] * i1 + self.f_right[j] * i2)


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    initial_panels: int = 200,
    rel_tol: float = 1e-10,
    max_depth: int = 40,
) -> SimpsonPanels:
    """
    Integrate f on [a, b], starting from `initial_panels` equal panels and
    bisecting any panel whose two-half estimate differs from the whole-panel
    estimate by more than its share of rel_tol * (coarse integral).
    """
    if not b > a:
        raise DomainError(f"empty integration range [{a}, {b}]")

    cache: Dict[float, float] = {}

    def value(x: float) -> float:
        if x not in cache:
            cache[x] = float(f(x))
        return cache[x]

    edges = np.linspace(a, b, initial_panels + 1)
    edges[0], edges[-1] = a, b
    coarse = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        lo, hi = float(lo), float(hi)
        mid = 0.5 * (lo + hi)
        coarse.append((lo, mid, hi, (hi - lo) / 6.0 * (value(lo) + 4.0 * value(mid) + value(hi))))
    total = sum(abs(entry[3]) for entry in coarse)
    if total == 0.0:
        raise ConvergenceError("integrand vanishes on the whole integration range")

    accepted: List[Tuple[float, float, float]] = []

    def refine(lo: float, mid: float, hi: float, whole: float, tol: float, depth: int) -> None:
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        left = (mid - lo) / 6.0 * (value(lo) + 4.0 * value(lm) + value(mid))
        right = (hi - mid) / 6.0 * (value(mid) + 4.0 * value(rm) + value(hi))
        if depth >= max_depth or abs(left + right - whole) <= 15.0 * tol:
            accepted.append((lo, lm, mid))
            accepted.append((mid, rm, hi))
            return
        refine(lo, lm, mid, left, tol / 2.0, depth + 1)
        refine(mid, rm, hi, right, tol / 2.0, depth + 1)

    panel_tol = rel_tol * total / initial_panels
    for lo, mid, hi, whole in coarse:
        refine(lo, mid, hi, whole, panel_tol, 0)

    logger.debug("adaptive Simpson on [%g, %g]: %d panels, %d evaluations", a, b, len(accepted), len(cache))
    arr = np.array(accepted)
    return SimpsonPanels(
        left=arr[:, 0],
        mid=arr[:, 1],
        right=arr[:, 2],
        f_left=np.array([cache[x] for x in arr[:, 0]]),
        f_mid=np.array([cache[x] for x in arr[:, 1]]),
        f_right=np.array([cache[x] for x in arr[:, 2]]),
    )
