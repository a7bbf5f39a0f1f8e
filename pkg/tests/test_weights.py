"""Tests for smooth weights, profiles and their diagnostics."""

import math
import os
import tempfile
import unittest
from fractions import Fraction

import numpy as np

from fuplab import gridset, weights
from fuplab.exceptions import FupLabRangeError
from fuplab.models import CantorSpec
from fuplab.profile import DEFAULT_PROFILE, BumpProfile, omega_zero_jets, shell_jets, smoothstep_coefficients


def cantor_frequencies(depth=5):
    return gridset.gen_cantor_product(CantorSpec.uniform(2, 3, (0, 2), depth), frequency=True)


def annulus_points(rng, count, lo, hi, dim=2):
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return v * rng.uniform(lo, hi, count)[:, None]


def cover_annulus(dim, k, width):
    """Cube centres of the half-width lattice lying in A_k."""

    half = width / 2
    n = int(math.ceil(2.0 ** (k + 1) / half))
    axis = np.arange(-n, n + 1)
    c = np.stack(np.meshgrid(*(axis,) * dim, indexing="ij"), axis=-1).reshape(-1, dim) * half
    r = np.linalg.norm(c, axis=1)
    return c[(r >= 2.0 ** k) & (r < 2.0 ** (k + 1))]


def finite_difference(w, points, a, step=1e-3):
    """Central differences of the order a - 1 tensor along each axis, stacked last."""

    dim = points.shape[1]
    columns = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = step
        columns.append((w.jet(points + e, a - 1)[a - 1] - w.jet(points - e, a - 1)[a - 1]) / (2 * step))
    return np.stack(columns, axis=-1)


def assert_derivatives(test, w, points, places=1e-6):
    for a in (1, 2, 3):
        exact = w.jet(points, a)[a]
        approx = finite_difference(w, points, a)
        scale = max(np.max(np.abs(exact)), 1e-300)
        np.testing.assert_allclose(approx, exact, rtol=places, atol=places * scale, err_msg=f"order {a}")


class TestProfile(unittest.TestCase):
    def test_order_nine_coefficients(self):
        self.assertEqual((0, 0, 0, 0, 0, 126, -420, 540, -315, 70), smoothstep_coefficients(9))

    def test_even_order_rejected(self):
        with self.assertRaises(FupLabRangeError):
            BumpProfile(8)
        with self.assertRaises(FupLabRangeError):
            BumpProfile(5)

    def test_exact_partition_on_rationals(self):
        for n in range(-40, 41):
            self.assertEqual(Fraction(1), DEFAULT_PROFILE.exact_partition(Fraction(n, 7)))

    def test_float_partition(self):
        t = np.random.default_rng(0).uniform(-5, 5, 10 ** 4)
        total = sum(DEFAULT_PROFILE.bump(t - n) for n in range(-7, 8))

        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_flat_joins(self):
        for a in (1, 2, 3):
            self.assertEqual(0.0, float(DEFAULT_PROFILE.step(0.0, a)))
            self.assertEqual(0.0, float(DEFAULT_PROFILE.step(1.0, a)))
            self.assertAlmostEqual(0.0, float(DEFAULT_PROFILE._polys[a](1.0)), places=9)
        self.assertEqual(1.0, float(DEFAULT_PROFILE.step(3.0)))

    def test_monotone_step(self):
        t = np.linspace(-0.5, 1.5, 4001)

        self.assertTrue(np.all(np.diff(DEFAULT_PROFILE.step(t)) >= 0))

    def test_shell_partition(self):
        r = np.random.default_rng(1).uniform(0, 2 ** 12, 10 ** 4)
        total = sum(shell_jets(k, r)[0] for k in range(12))

        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_omega_zero_value(self):
        w = weights.omega_zero(2)

        self.assertAlmostEqual(-20 / math.log(22) ** 2, weights.eval_weight(w, [20.0, 0.0]), places=12)
        self.assertAlmostEqual(-20 / math.log(22) ** 2, weights.eval_weight(w, [0.0, 20.0]), places=12)
        self.assertEqual(0.0, weights.eval_weight(w, [3.0, 0.0]))

    def test_omega_zero_jets(self):
        r = np.linspace(5.5, 60, 50)
        h = 1e-4
        jets = omega_zero_jets(r)
        for a in (1, 2, 3):
            approx = (omega_zero_jets(r + h)[a - 1] - omega_zero_jets(r - h)[a - 1]) / (2 * h)
            np.testing.assert_allclose(approx, jets[a], rtol=1e-6, atol=1e-8)

    def test_omega_zero_tensors(self):
        rng = np.random.default_rng(2)
        assert_derivatives(self, weights.omega_zero(2), annulus_points(rng, 100, 6, 80))


class TestDampingWeight(unittest.TestCase):
    alpha = 0.8

    @classmethod
    def setUpClass(cls):
        cls.Y = cantor_frequencies()
        cls.w = weights.build_damping_weight(cls.Y, 0.1, 10 * math.sqrt(2), cls.alpha)

    def test_first_shell(self):
        self.assertEqual(5, weights.first_shell(10 * math.sqrt(2), 0.2))
        self.assertEqual(5, self.w.params["k0"])

    def test_parameters_recorded(self):
        self.assertEqual({"nu": 0.1, "mu": 10 * math.sqrt(2), "alpha": self.alpha, "k0": 5, "s": 0.2}, self.w.params)

    def test_shells_and_widths(self):
        self.assertEqual([5, 6, 7], self.w.shells)
        for piece in self.w.pieces:
            self.assertAlmostEqual(weights.shell_width(piece.k, 0.2, 2), piece.width)
            self.assertGreaterEqual(piece.support[0], 2.0 ** (piece.k - 1) - 1e-9)
            self.assertLessEqual(piece.support[1], 2.0 ** (piece.k + 2) + 1e-9)

    def test_width_cap(self):
        for k in range(5, 12):
            width = weights.shell_width(k, 0.2, 2)

            self.assertEqual(2.0 ** (k - 1) / math.sqrt(2), width)
            self.assertLess(width, 2.0 ** k / k ** 0.2)
            # a cube meeting A_k stays inside 2^(k-1) <= |x| <= 2^(k+2)
            self.assertGreaterEqual(2.0 ** k - math.sqrt(2) * width, 2.0 ** (k - 1) - 1e-9)
            self.assertLessEqual(2.0 ** (k + 1) + math.sqrt(2) * width, 2.0 ** (k + 2))
        self.assertEqual(2.0 ** 40 / 40 ** 0.2, weights.shell_width(40, 0.2, 1))

    def test_vanishes_near_origin(self):
        points = annulus_points(np.random.default_rng(3), 500, 0, 2)

        self.assertTrue(np.all(weights.eval_weight(self.w, points) == 0))

    def test_plateau_on_Y(self):
        centers = gridset.cell_centers(self.Y)
        r = np.linalg.norm(centers, axis=1)
        for piece in self.w.pieces:
            on = centers[(r >= 2.0 ** piece.k) & (r < 2.0 ** (piece.k + 1))]
            amplitude = -(2.0 ** piece.k) / piece.k ** self.alpha

            np.testing.assert_allclose(piece.jet(on, 0)[0], amplitude, rtol=1e-12)
            self.assertTrue(np.all(weights.eval_weight(self.w, on) <= amplitude + 1e-12))

    def test_nonpositive(self):
        points = annulus_points(np.random.default_rng(4), 2000, 0, 300)

        self.assertTrue(np.all(weights.eval_weight(self.w, points) <= 0))

    def test_derivatives_match_differences(self):
        points = annulus_points(np.random.default_rng(5), 100, 20, 180)

        assert_derivatives(self, self.w, points)

    def test_lower_bound(self):
        passed, worst, count = weights.damping_lower_bound_check(self.w, self.Y)

        self.assertTrue(passed)
        self.assertLess(worst, 0)
        self.assertGreater(count, 0)

    def test_alpha_floor(self):
        with self.assertRaises(FupLabRangeError):
            weights.build_damping_weight(self.Y, 0.1, 10 * math.sqrt(2), 0.6)

    def test_small_Y_gives_zero_weight(self):
        small = gridset.frequency_grid(np.ones((9, 9), dtype=bool))
        w = weights.build_damping_weight(small, 0.1, 10 * math.sqrt(2), self.alpha)

        self.assertEqual([], w.pieces)
        self.assertEqual(0.0, weights.eval_weight(w, [3.0, 4.0]))

    def test_outside_support(self):
        x = np.array([500.0, 0.0])
        for a in range(4):
            self.assertFalse(np.any(weights.eval_weight(self.w, x, a)))
        with self.assertRaises(FupLabRangeError):
            weights.eval_weight(self.w, x, 4)

    def test_save_and_load(self):
        points = annulus_points(np.random.default_rng(6), 50, 20, 180)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "weight.json")
            weights.save_weight(self.w, path)
            loaded = weights.load_weight(path)

        self.assertEqual(self.w.params, loaded.params)
        np.testing.assert_array_equal(weights.eval_weight(self.w, points), weights.eval_weight(loaded, points))

    def test_growth_is_finite(self):
        report = weights.growth_report(self.w, directions=16)

        self.assertTrue(np.all(report.G_star >= 0))
        self.assertTrue(math.isfinite(report.integral_value))
        self.assertGreater(report.integral_value, 0)
        self.assertTrue(math.isfinite(report.tail_bound))


class TestProjection(unittest.TestCase):
    def test_constant_on_annulus(self):
        piece = weights.RadialPiece(0, weights.RADIAL_INDICATOR, 3.0, 2, 1.0, 2.0)

        self.assertAlmostEqual(1.5, weights.spherical_projection(piece, [0.6, 0.8]), places=12)

    def test_rejects_origin(self):
        with self.assertRaises(FupLabRangeError):
            weights.spherical_projection(weights.shell_piece(0, 2), [1.0, 0.0])

    def test_shell_masses_scale(self):
        scaled = [weights.spherical_projection(weights.shell_piece(k, 2), [1.0, 0.0]) * 2 ** k for k in range(1, 21)]

        self.assertGreater(scaled[0], 0)
        np.testing.assert_allclose(scaled, scaled[0], rtol=1e-9)

    def test_many_directions(self):
        piece = weights.shell_piece(4, 3, amplitude=-1.0)
        dirs = np.eye(3)

        values = weights.spherical_projection(piece, dirs)
        self.assertEqual((3,), values.shape)
        np.testing.assert_allclose(values, values[0])


class TestGrowth(unittest.TestCase):
    @staticmethod
    def full_cover(amplitude, top=10):
        points = np.vstack([
            cover_annulus(2, k, weights.shell_width(k, 0.2, 2)) for k in range(2, top + 1)
        ])
        return weights.build_shell_weight(2, range(2, top + 1), amplitude, points)

    def test_zero_weight(self):
        report = weights.growth_report(weights.zero_weight(2))

        self.assertEqual(0.0, report.integral_value)
        self.assertFalse(report.diverged)

    def test_linear_weight_diverges(self):
        report = weights.growth_report(self.full_cover(lambda k: -(2.0 ** k)), directions=16)

        self.assertTrue(report.diverged)

    def test_damped_weight_converges(self):
        report = weights.growth_report(self.full_cover(lambda k: -(2.0 ** k) / k ** 2), directions=16)

        self.assertFalse(report.diverged)
        self.assertGreater(report.integral_value, 0)


class TestRegularity(unittest.TestCase):
    def test_zero_weight(self):
        self.assertEqual(0.0, weights.regularity_scan(weights.zero_weight(2), 2).c_reg)

    def test_per_shell_bounded(self):
        direction = np.array([math.cos(0.3), math.sin(0.3)])
        points = np.array([1.5 * 2.0 ** k * direction for k in range(5, 21)])
        w = weights.build_shell_weight(2, range(5, 21), lambda k: -(2.0 ** k) / k ** 0.8, points)
        for a in (1, 2, 3):
            per_shell = weights.regularity_scan(w, a).per_shell

            self.assertEqual(list(range(5, 21)), sorted(per_shell))
            self.assertLessEqual(max(per_shell.values()), 2 * per_shell[5])

    def test_single_bump_scaling(self):
        k = 6
        width = weights.shell_width(k, 0.2, 2)
        cell = np.array([[round(1.5 * 2 ** k / (width / 2)), 0]])
        piece = weights.CubeShellPiece(k, 1.0, width, weights.encode_cells(cell), 2)
        w = weights.SmoothWeight(2, [piece], {})
        bracket = math.sqrt(1 + float(np.sum(piece.centers[0] ** 2)))
        for a in (1, 2, 3):
            reference = (2 / width) ** a * DEFAULT_PROFILE.derivative_sup(a) * bracket ** (a - 1)
            ratio = weights.regularity_scan(w, a).c_reg / reference

            self.assertTrue(0.25 <= ratio <= 4, f"order {a}: ratio {ratio}")


class TestCells(unittest.TestCase):
    def test_keys_are_reversible(self):
        cells = np.array([[0, 0, 0], [-5, 7, 300], [1000, -1000, 3]])

        np.testing.assert_array_equal(cells, weights.decode_cells(weights.encode_cells(cells), 3))

    def test_selected_cubes_hold_the_point(self):
        point = np.array([[13.7, -4.2]])
        width = 4.0
        cubes = weights.decode_cells(weights.select_cubes(point, width), 2) * width / 2

        self.assertEqual(4, len(cubes))
        self.assertTrue(np.all(np.abs(cubes - point) <= width / 2))


if __name__ == '__main__':
    unittest.main()
