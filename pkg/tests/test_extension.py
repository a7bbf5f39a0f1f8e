"""Tests for the Poisson extension, Hilbert transforms and certificates."""

import math
import unittest
from typing import NamedTuple, Tuple

import numpy as np
from scipy import integrate as scipy_integrate

from fuplab import extension, weights
from fuplab.const import TERM_EXTENSION, TERM_LOG_SUP, TERM_Y_BRACKET, TERM_Y_NORM
from fuplab.exceptions import FupLabRangeError
from fuplab.extension import Term
from fuplab.models import ComplexPoint, PshCertificate, SampleSpec
from fuplab.modification import modify_weight
from fuplab.profile import omega_zero_jets
from fuplab.quadrature import integrate
from tests.test_weights import annulus_points, cantor_frequencies


class GaussianBump(NamedTuple):
    """amplitude * exp(-|x - center|^2 / (2 sigma^2)), treated as vanishing beyond 8 sigma."""

    center: np.ndarray
    sigma: float
    amplitude: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def support(self) -> Tuple[float, float]:
        r = float(np.linalg.norm(self.center))
        return (r - 8 * self.sigma, r + 8 * self.sigma)

    def jet(self, points, order):
        u = points - self.center[None, :]
        f = self.amplitude * np.exp(-np.sum(u * u, axis=1) / (2 * self.sigma ** 2))
        out = [f]
        if order >= 1:
            out.append(-f[:, None] * u / self.sigma ** 2)
        if order >= 2:
            eye = np.eye(self.dim)[None, :, :]
            out.append(f[:, None, None] * (np.einsum("ni,nj->nij", u, u) / self.sigma ** 4 - eye / self.sigma ** 2))
        return out


def random_unit(rng, dim=2):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def damping_weight():
    return weights.build_damping_weight(cantor_frequencies(), 0.1, 10 * math.sqrt(2), 0.8)


class TestPoissonExtension(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.w = damping_weight()

    def test_zero_weight(self):
        self.assertEqual(0.0, extension.poisson_extend(weights.zero_weight(2), ComplexPoint.of([1, 2], [3, 4])))

    def test_boundary_values(self):
        for x in annulus_points(np.random.default_rng(20), 20, 0, 250):
            expected = float(weights.eval_weight(self.w, x))
            self.assertEqual(expected, extension.poisson_extend(self.w, ComplexPoint.of(x)))

    def test_constant_on_a_disc(self):
        w = weights.SmoothWeight(2, [weights.RadialPiece(0, weights.RADIAL_INDICATOR, 1.0, 2, 0.0, 1e6)], {})
        value = extension.poisson_extend(w, ComplexPoint.of([0.0, 0.0], [1.0, 0.0]))

        self.assertAlmostEqual(2 / np.pi * math.atan(1e6), value, places=7)

    def test_rule_covers_the_chord_once(self):
        edges = extension._graded_edges(-1e6, 1e6)
        self.assertTrue(np.all(np.diff(edges) > 0))

        w = weights.SmoothWeight(2, [weights.RadialPiece(0, weights.RADIAL_INDICATOR, 1.0, 2, 0.0, 1e6)], {})
        rule = extension.extension_rule(w, ComplexPoint.of([0.0, 0.0], [1.0, 0.0]))
        self.assertAlmostEqual(2 / np.pi * math.atan(1e6), float(rule.weights.sum()), places=8)

    def test_off_axis_bump_matches_quad(self):
        bump = GaussianBump(np.array([40.0, 10.0]), 2.0)
        x, y = np.array([0.7, 0.2]), np.array([-6.0, -1.5])

        def integrand(t):
            return float(bump.jet((x + t * y)[None, :], 0)[0][0]) / (np.pi * (1 + t * t))

        centre = -float(np.dot(x - bump.center, y)) / float(np.dot(y, y))
        expected, _ = scipy_integrate.quad(integrand, centre - 10, centre + 10, epsabs=1e-13, points=[centre])

        value = extension.poisson_extend(bump, ComplexPoint.of(x, y))
        self.assertAlmostEqual(expected, value, delta=1e-7)

    def test_omega_zero_tail(self):
        def near(u):
            t = math.exp(u)
            return t * float(omega_zero_jets(np.array([t]))[0][0]) / (1 + t * t)

        def far(u):
            return -1.0 / ((1 + math.exp(-2 * u)) * (u + math.log1p(2 * math.exp(-u))) ** 2)

        inner, _ = scipy_integrate.quad(near, math.log(5), math.log(10), epsabs=1e-13)
        outer, _ = scipy_integrate.quad(far, math.log(10), np.inf, epsabs=1e-13, limit=200)
        expected = 2 / np.pi * (inner + outer)

        value = extension.poisson_extend(weights.omega_zero(2), ComplexPoint.of([0.0, 0.0], [1.0, 0.0]))
        self.assertAlmostEqual(expected, value, delta=1e-6 * abs(expected))

    def test_omega_zero_extension_nonnegative_near_origin(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            q = random_unit(rng, 4) * rng.uniform(0.5, 2)
            self.assertGreaterEqual(extension.omega_zero_extension(ComplexPoint.of(q[:2], q[2:])), 0)

    def test_sandwich(self):
        rng = np.random.default_rng(22)
        for x in annulus_points(rng, 6, 20, 200):
            y = random_unit(rng) * rng.uniform(0.05, 2)
            z = ComplexPoint.of(x, y)
            bound = extension.hilbert_sup(self.w, (x, y), samples=256)
            gap = extension.poisson_extend(self.w, z) - float(weights.eval_weight(self.w, x))

            self.assertLessEqual(abs(gap), 1.05 * np.linalg.norm(y) * bound + 1e-6)


class TestHilbert(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.w = damping_weight()

    def test_zero_weight(self):
        self.assertEqual(0.0, extension.hilbert_restriction(weights.zero_weight(2), ([1.0, 2.0], [0.0, 1.0])))

    def test_away_from_support(self):
        direction = np.array([0.6, 0.8])
        value = extension.hilbert_restriction(self.w, (np.zeros(2), direction))

        expected = 0.0
        top = self.w.support_radius + 1
        for a, b in ((-top, -1.0), (1.0, top)):
            part, _ = integrate(lambda s: weights.eval_weight(self.w, s[:, None] * direction) / s ** 2, a, b, 1e-10)
            expected -= float(part) / np.pi
        self.assertNotEqual(0.0, expected)
        self.assertAlmostEqual(expected, value, delta=1e-6 * max(1.0, abs(expected)))

    def test_translation_covariance(self):
        x0 = np.array([30.0, -50.0])
        direction = np.array([1.0, 2.0]) / math.sqrt(5)
        shifted = extension.hilbert_restriction(self.w, (x0 + 17.5 * direction, direction))

        self.assertAlmostEqual(shifted, extension.hilbert_restriction(self.w, (x0, direction), 17.5), delta=1e-6)

    def test_pencil_bound(self):
        bound = extension.pencil_bound(self.w, np.zeros(2), angles=90)
        rng = np.random.default_rng(23)
        for _ in range(5):
            value = extension.hilbert_restriction(self.w, (np.zeros(2), random_unit(rng)))
            self.assertLessEqual(abs(value), 2 * bound + 1e-6)

    def test_unbounded_rejected(self):
        with self.assertRaises(FupLabRangeError):
            extension.hilbert_restriction(weights.omega_zero(2), ([0.0, 0.0], [1.0, 0.0]))


class TestLineIntegrals(unittest.TestCase):
    def test_zero_weight(self):
        self.assertEqual(0.0, extension.second_deriv_line_integral(weights.zero_weight(2), [1, 1], [1, 0], [0, 1]))

    def test_non_orthogonal_rejected(self):
        with self.assertRaises(FupLabRangeError):
            extension.second_deriv_line_integral(weights.zero_weight(2), [1, 1], [1, 0], [1, 1])

    def test_radial_modified_piece(self):
        mw = modify_weight(weights.SmoothWeight(2, [weights.shell_piece(6, 2, -3.0)], {}))
        value = extension.second_deriv_line_integral(mw.modified_piece(6), np.zeros(2), [1.0, 0.0], [0.0, 1.0])

        self.assertAlmostEqual(2 * mw.q[6], value, delta=1e-4 * abs(mw.q[6]))

    def test_modified_piece_in_space(self):
        points = np.array([[40.0, 0.0, 0.0], [0.0, 45.0, 10.0], [-20.0, -30.0, 25.0]])
        mw = modify_weight(weights.build_shell_weight(3, [5], lambda k: -2.0, points), samples=64)
        value = extension.second_deriv_line_integral(mw.modified_piece(5), np.zeros(3), [0, 0, 1.0], [1.0, 0, 0])

        self.assertAlmostEqual(2 * mw.q[5], value, delta=1e-3 * abs(mw.q[5]))

    def test_ray_identity(self):
        bump = GaussianBump(np.array([30.0, 0.0]), 3.0)
        direction = np.array([math.cos(0.05), math.sin(0.05)])
        normal = np.array([-direction[1], direction[0]])

        def projection(theta):
            v = math.cos(theta) * direction + math.sin(theta) * normal
            return weights.spherical_projection(bump, v, panels=512)

        h = 5e-3
        curvature = (
            -projection(2 * h) + 16 * projection(h) - 30 * projection(0.0) + 16 * projection(-h) - projection(-2 * h)
        ) / (12 * h ** 2)
        value = extension.second_deriv_line_integral(bump, np.zeros(2), direction, normal)

        self.assertAlmostEqual(projection(0.0) + curvature, value, delta=1e-5 * abs(value))


class TestComplexHessian(unittest.TestCase):
    def test_y_norm(self):
        form = extension.complex_hessian([Term(TERM_Y_NORM)], ComplexPoint.of([0.3, 0.4], [1.0, 0.0]))

        self.assertAlmostEqual(0.25, form.quadratic([0.0, 1.0]))
        self.assertAlmostEqual(0.0, form.quadratic([1.0, 0.0]))

    def test_y_bracket(self):
        y = np.array([0.6, 0.8])
        form = extension.complex_hessian([Term(TERM_Y_BRACKET)], ComplexPoint.of([1.0, 1.0], y))

        self.assertAlmostEqual(0.25 * 2 ** -1.5, form.min_eig())
        self.assertAlmostEqual(0.25 * 2 ** -1.5, form.quadratic(y))

    def test_singular_terms_rejected(self):
        real = ComplexPoint.of([1.0, 2.0])
        with self.assertRaises(FupLabRangeError):
            extension.complex_hessian([Term(TERM_Y_NORM)], real)
        with self.assertRaises(FupLabRangeError):
            extension.complex_hessian([Term(TERM_EXTENSION, 1.0, weights.zero_weight(2))], real)
        with self.assertRaises(FupLabRangeError):
            extension.complex_hessian([Term(TERM_LOG_SUP)], ComplexPoint.of([0.0, 1.0], [0.0, 1.0]))

    def test_y_norm_matches_differences(self):
        terms = [Term(TERM_Y_NORM), Term(TERM_Y_BRACKET, 0.5), Term(TERM_LOG_SUP, 3.0)]
        z = ComplexPoint.of([1.0, 2.0], [0.3, -0.4])
        exact = extension.complex_hessian(terms, z)
        approx = extension.hessian_finite_difference(terms, z)

        np.testing.assert_allclose(approx.entries, exact.entries, atol=1e-6)

    def test_extension_matches_differences(self):
        w = damping_weight()
        rng = np.random.default_rng(24)
        for _ in range(25):
            z = ComplexPoint.of(random_unit(rng) * rng.uniform(0, 1), random_unit(rng) * rng.uniform(0.5, 2))
            exact = extension.complex_hessian([Term(TERM_EXTENSION, 1.0, w)], z)
            approx = extension.hessian_finite_difference([Term(TERM_EXTENSION, 1.0, w)], z)
            scale = float(np.max(np.abs(exact.entries)))

            self.assertLess(exact.asymmetry(), 1e-12)
            np.testing.assert_allclose(approx.entries, exact.entries, rtol=1e-3, atol=1e-3 * scale + 1e-7)

    def test_degeneracy_and_scaling(self):
        w = damping_weight()
        x = np.array([0.5, -0.2])
        y = np.array([1.2, 1.6])
        form = extension.complex_hessian([Term(TERM_EXTENSION, 1.0, w)], ComplexPoint.of(x, y))
        unit = extension.complex_hessian([Term(TERM_EXTENSION, 1.0, w)], ComplexPoint.of(x, y / 2))
        v = np.array([0.3, 0.9])
        v1 = v - np.dot(v, y) / np.dot(y, y) * y

        self.assertAlmostEqual(form.quadratic(v1), form.quadratic(v), delta=1e-6 * max(1.0, abs(form.quadratic(v))))
        np.testing.assert_allclose(form.entries, unit.entries / 2, rtol=1e-6, atol=1e-12)
        self.assertLess(np.max(np.abs(form.entries.imag)), 1e-9)


class TestCertificate(unittest.TestCase):
    spec = SampleSpec(count=40, seed=3, hilbert_lines=8)

    @classmethod
    def setUpClass(cls):
        cls.w = damping_weight()
        cls.mw = modify_weight(cls.w)
        cls.scan = extension.scan_constants(cls.mw, cls.spec)

    def test_zero_weight(self):
        cert = extension.psh_certificate(weights.zero_weight(2), 0.0, SampleSpec(count=20, hilbert_lines=5))

        self.assertTrue(cert.passed)
        self.assertTrue(all(value == 0 for value in cert.min_eig))
        self.assertIsNone(cert.witness)

    def test_pass_ignores_real_locus_margin(self):
        z = ComplexPoint.of([1.0, 0.0], [0.0, 1.0])
        cert = PshCertificate([z], [0.0], 0.0, 1.0, 1e-6, -0.5, None)

        self.assertTrue(cert.passed)
        self.assertEqual(-0.5, cert.as_dict()["real_locus_margin"])
        self.assertFalse(cert._replace(global_min=-1e-3).passed)

    def test_scan(self):
        self.assertGreater(self.scan.C1, 0)
        self.assertGreater(self.scan.C2, 0)
        self.assertLessEqual(self.scan.line_min, self.scan.line_max)
        self.assertEqual(-self.scan.C2, self.scan.line_min)

    def test_certified_constant_passes(self):
        C = max(self.scan.C1, self.scan.C2)
        cert = extension.psh_certificate(self.mw, C, self.spec)

        self.assertTrue(cert.passed)
        self.assertGreaterEqual(cert.global_min, -1e-6)
        self.assertGreaterEqual(cert.real_locus_margin, 0)
        self.assertEqual(min(cert.min_eig), cert.global_min)
        self.assertTrue(cert.as_dict()["passed"])

    def test_zero_constant_finds_witness(self):
        cert = extension.psh_certificate(self.mw, 0.0, self.spec)

        self.assertFalse(cert.passed)
        self.assertIsNotNone(cert.witness)
        self.assertLess(cert.global_min, -1e-6)

    def test_sandwich_with_certified_constant(self):
        C = max(self.scan.C1, self.scan.C2)
        for z in extension.sample_points(self.mw, self.spec)[:self.spec.hilbert_lines]:
            base = float(weights.eval_weight(self.mw, z.x))
            value = extension.poisson_extend(self.mw, z)
            self.assertLessEqual(abs(value - base), 1.1 * C * z.y_norm + 1e-6)

    def test_shell_sum_dominates(self):
        rng = np.random.default_rng(25)
        for _ in range(3):
            line = (random_unit(rng) * 50, random_unit(rng))
            total = extension.shell_hilbert_sum(self.mw, line)

            self.assertTrue(math.isfinite(total))
            self.assertGreaterEqual(total + 1e-6, abs(extension.hilbert_restriction(self.mw, line)))


class TestPhi(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mw = modify_weight(damping_weight())

    def test_real_point_near_origin(self):
        phi, kappa = extension.phi_kappa(ComplexPoint.of([0.5, -1.5]), self.mw, 2.0, 2)

        self.assertAlmostEqual(40 * math.log(1.5), phi, places=12)
        self.assertEqual(0.25, kappa)

    def test_kappa(self):
        _, kappa = extension.phi_kappa(ComplexPoint.of([0.5, 0.0], [0.0, 2.0]), self.mw, 3.0, 2, C=10.0)

        self.assertAlmostEqual(3.0 / 8 * 5 ** -1.5, kappa)

    def test_rejections(self):
        with self.assertRaises(FupLabRangeError):
            extension.phi_kappa(ComplexPoint.of([0.0, 0.0]), self.mw, 1.0, 2)
        with self.assertRaises(FupLabRangeError):
            extension.phi_kappa(ComplexPoint.of([1.0, 0.0]), self.mw, 0.0, 2)
        with self.assertRaises(FupLabRangeError):
            extension.phi_kappa(ComplexPoint.of([1.0, 0.0]), self.mw, 1.0, 3)

    def test_constant_shifts_phi(self):
        rng = np.random.default_rng(26)
        for _ in range(5):
            q = random_unit(rng, 4) * rng.uniform(0.5, 2)
            z = ComplexPoint.of(q[:2], q[2:])
            plain, _ = extension.phi_kappa(z, self.mw, 1.0, 2)
            shifted, _ = extension.phi_kappa(z, self.mw, 1.0, 2, C=10.0)

            self.assertAlmostEqual(plain + 20 * z.y_norm, shifted, places=9)


if __name__ == '__main__':
    unittest.main()
