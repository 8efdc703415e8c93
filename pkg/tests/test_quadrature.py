import math

import numpy as np
import pytest

from errors import ConvergenceError, DomainError
from quadrature import adaptive_simpson


def test_exponential_integral_and_cdf():
    panels = adaptive_simpson(lambda x: math.exp(-x), 0.0, 10.0)
    assert panels.integral == pytest.approx(1.0 - math.exp(-10.0), abs=1e-10)
    for x in (0.01, 0.5, 2.0, 7.3):
        assert panels.partial_integral(x) == pytest.approx(1.0 - math.exp(-x), abs=1e-8)
    assert panels.partial_integral(-1.0) == 0.0
    assert panels.partial_integral(11.0) == panels.integral


def test_cubic_is_exact():
    panels = adaptive_simpson(lambda x: x ** 3 - 2 * x, 0.0, 2.0, initial_panels=4)
    assert panels.integral == pytest.approx(0.0, abs=1e-12)


def test_nodes_and_weights_reproduce_integral():
    panels = adaptive_simpson(lambda x: math.exp(-0.5 * (x - 3.0) ** 2), 0.0, 12.0)
    nodes, weights, values = panels.nodes_and_weights()
    assert nodes[0] == 0.0
    assert np.all(np.diff(nodes) > 0)
    assert np.all(weights > 0)
    assert float(np.sum(weights * values)) == pytest.approx(panels.integral, rel=1e-13)
    assert panels.integral == pytest.approx(math.sqrt(2 * math.pi) * (1 - 0.5 * math.erfc(3 / math.sqrt(2)) - 0.5 * math.erfc(9 / math.sqrt(2))), rel=1e-9)


def test_spike_at_zero_is_refined():
    panels = adaptive_simpson(lambda x: math.exp(-x / 0.01), 0.0, 100.0)
    assert panels.integral == pytest.approx(0.01, rel=1e-8)


def test_vanishing_integrand():
    with pytest.raises(ConvergenceError):
        adaptive_simpson(lambda x: 0.0, 0.0, 1.0)


def test_empty_range():
    with pytest.raises(DomainError):
        adaptive_simpson(math.exp, 1.0, 1.0)
