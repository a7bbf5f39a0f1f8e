"""Tests for the composite Gauss rules."""

import math
import unittest

import numpy as np

from fuplab import quadrature
from fuplab.exceptions import FupLabConvergenceError


class TestCompositeRule(unittest.TestCase):
    def test_weights_sum_to_length(self):
        t, w = quadrature.composite_rule(-2.0, 3.0, 7)

        self.assertEqual(7 * quadrature.GAUSS_NODES, len(t))
        self.assertAlmostEqual(5.0, w.sum(), places=13)
        self.assertTrue(np.all((t > -2.0) & (t < 3.0)))

    def test_empty_rule(self):
        rule = (np.zeros(0), np.zeros(0))

        self.assertEqual(0.0, quadrature.apply_rule(np.sin, rule))


class TestAdaptiveRule(unittest.TestCase):
    def test_polynomial_needs_two_confirmations(self):
        value, panels = quadrature.integrate(lambda t: t ** 5, 0.0, 1.0, 1e-12, start=16)

        self.assertAlmostEqual(1 / 6, float(value), places=14)
        self.assertEqual(64, panels)

    def test_vector_values(self):
        value, _ = quadrature.integrate(lambda t: np.stack([np.cos(t), np.sin(t)], axis=-1), 0.0, math.pi, 1e-12)

        np.testing.assert_allclose([0.0, 2.0], value, atol=1e-12)

    def test_narrow_bump(self):
        width = 1e-3
        value, panels = quadrature.integrate(lambda t: np.exp(-((t - 0.3) / width) ** 2), 0.0, 1.0, 1e-13)

        self.assertAlmostEqual(math.sqrt(math.pi) * width, float(value), places=11)
        self.assertGreater(panels, 64)

    def test_unresolved_oscillation_raises(self):
        with self.assertRaises(FupLabConvergenceError) as ctx:
            quadrature.adaptive_rule(lambda t: np.sin(1e6 * t), 0.0, 1.0, 1e-12, start=16, max_panels=64)

        self.assertIn("64 panels", str(ctx.exception))

    def test_empty_interval(self):
        value, panels = quadrature.integrate(np.exp, 1.0, 1.0, 1e-12)

        self.assertEqual(0.0, float(value))
        self.assertEqual(0, panels)


if __name__ == '__main__':
    unittest.main()
