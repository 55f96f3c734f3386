"""Unit tests for the tagged-server idle probability and its derivatives."""

import unittest

import numpy as np

from pystratq.core_types import QueueDomainError, SystemConfig, TaggedProfile, polynomial_cost
from pystratq.idle_time import (
    idle_curve,
    idle_derivatives,
    idle_probability,
    mm1_utility,
    shape_scan,
    tagged_utility,
)
from pystratq.routing_mm2 import idle_p
from tests.conftest import central_difference, random_tagged_instances


class TestIdleProbability(unittest.TestCase):
    """Test cases for idle_probability."""

    def test_symmetric_two_server(self):
        """Test I = 1/2 for λ = 1, N = 2, μ1 = μ = 1."""
        self.assertAlmostEqual(idle_probability(TaggedProfile(mu1=1.0, mu=1.0), SystemConfig(lam=1.0, N=2)), 0.5, places=14)

    def test_heterogeneous_two_server(self):
        """Test I = 10/17 for λ = 1, μ1 = 1, μ = 2."""
        value = idle_probability(TaggedProfile(mu1=1.0, mu=2.0), SystemConfig(lam=1.0, N=2))
        self.assertAlmostEqual(value, 10.0 / 17.0, places=12)

    def test_homogeneous_reduction(self):
        """Test μ1 = μ gives 1 - λ/(Nμ)."""
        for lam, n, mu in ((1.0, 3, 0.5), (5.0, 10, 0.8), (0.3, 2, 1.0)):
            value = idle_probability(TaggedProfile(mu1=mu, mu=mu), SystemConfig(lam=lam, N=n))
            self.assertAlmostEqual(value, 1.0 - lam / (n * mu), places=12)

    def test_continuous_through_symmetric_point(self):
        """Test the general formula approaches the symmetric value."""
        cfg = SystemConfig(lam=1.5, N=3)
        near = idle_probability(TaggedProfile(mu1=1.0 + 1e-9, mu=1.0), cfg)
        self.assertAlmostEqual(near, 0.5, places=8)

    def test_single_server_reduction(self):
        """Test N = 1 gives 1 - λ/μ1 whatever μ is."""
        cfg = SystemConfig(lam=0.5, N=1)
        self.assertAlmostEqual(idle_probability(TaggedProfile(mu1=2.0, mu=0.7), cfg), 0.75, places=12)

    def test_domain(self):
        """Test profiles outside the stable region are rejected."""
        cfg = SystemConfig(lam=2.0, N=2)
        with self.assertRaises(QueueDomainError):
            idle_probability(TaggedProfile(mu1=1.0, mu=1.0), cfg)
        with self.assertRaises(QueueDomainError):
            idle_probability(TaggedProfile(mu1=0.4, mu=1.5), cfg)

    def test_bounded_and_increasing(self):
        """Test I lies in (0, 1) and rises with μ1 on random instances."""
        for cfg, mu1, mu in random_tagged_instances(seed=11, count=1000):
            grid = np.sort(mu1 * np.array([1.0, 1.3, 1.7, 2.5, 4.0]))
            values = np.asarray(idle_curve(grid, mu, cfg))
            self.assertTrue(np.all((values > 0) & (values < 1)))
            self.assertTrue(np.all(np.diff(values) > 0))

    def test_agrees_with_two_server_closed_form(self):
        """Test N = 2 matches the M/M/2 formula with an even split."""
        rng = np.random.default_rng(5)
        for _ in range(100):
            lam = float(rng.uniform(0.2, 3.0))
            mu = lam / 2 * float(rng.uniform(1.05, 3.0))
            mu1 = max(lam - mu, 0.0) + float(rng.uniform(0.01, 3.0))
            expected = idle_p(lam, mu1, mu, 0.5)[0]
            self.assertAlmostEqual(idle_probability(TaggedProfile(mu1=mu1, mu=mu), SystemConfig(lam=lam, N=2)), expected, places=10)


class TestIdleDerivatives(unittest.TestCase):
    """Test cases for idle_derivatives."""

    def test_against_finite_differences(self):
        """Test ∂I and ∂²I at a fixed instance."""
        cfg = SystemConfig(lam=1.5, N=3)
        mu, mu1 = 1.0, 1.3
        h = 1e-5 * max(1.0, mu1)
        derivs = idle_derivatives(TaggedProfile(mu1=mu1, mu=mu), cfg)
        fd1 = central_difference(lambda x: idle_probability(TaggedProfile(mu1=x, mu=mu), cfg), mu1, h)
        fd2 = central_difference(lambda x: idle_derivatives(TaggedProfile(mu1=x, mu=mu), cfg).dI, mu1, h)
        self.assertLess(abs(fd1 - derivs.dI) / abs(derivs.dI), 1e-6)
        self.assertLess(abs(fd2 - derivs.d2I) / abs(derivs.d2I), 1e-4)

    def test_random_instances(self):
        """Test derivative consistency on 200 random instances away from the floor."""
        for cfg, mu1, mu in random_tagged_instances(seed=3, count=200):
            h = 1e-5 * max(1.0, mu1)
            derivs = idle_derivatives(TaggedProfile(mu1=mu1, mu=mu), cfg)
            fd1 = central_difference(lambda x, m=mu, c=cfg: float(idle_curve(x, m, c)), mu1, h)
            fd2 = central_difference(lambda x, m=mu, c=cfg: idle_derivatives(TaggedProfile(mu1=x, mu=m), c).dI, mu1, h)
            self.assertLessEqual(abs(fd1 - derivs.dI), 1e-5 * abs(derivs.dI) + 1e-9)
            self.assertLessEqual(abs(fd2 - derivs.d2I), 1e-4 * abs(derivs.d2I) + 1e-8)

    def test_symmetric_two_server_slope(self):
        """Test ∂I/∂μ1 = 1/3 at λ = 1, N = 2, μ1 = μ = 1."""
        derivs = idle_derivatives(TaggedProfile(mu1=1.0, mu=1.0), SystemConfig(lam=1.0, N=2))
        self.assertAlmostEqual(derivs.dI, 1.0 / 3.0, places=12)


class TestShapeScan(unittest.TestCase):
    """Test cases for shape_scan."""

    def test_convex_then_concave(self):
        """Test at most one sign change, from convex to concave."""
        for lam, n, mu in ((1.0, 2, 1.0), (4.0, 20, 0.3), (2.0, 5, 0.6)):
            scan = shape_scan(SystemConfig(lam=lam, N=n), mu)
            self.assertLessEqual(scan.sign_changes, 1)
            self.assertIn(scan.pattern, ((1, -1), (-1,), (1,)))
            self.assertTrue(scan.convex_part_decreasing)

    def test_bracket_reported(self):
        """Test the threshold bracket sits inside the grid when the sign flips."""
        scan = shape_scan(SystemConfig(lam=1.0, N=2), 1.0)
        if scan.pattern == (1, -1):
            lo, hi = scan.threshold_bracket
            self.assertLess(lo, hi)
            self.assertGreaterEqual(lo, scan.mu1_grid[0])
        else:
            self.assertIsNone(scan.threshold_bracket)

    def test_grid_refinement_stable(self):
        """Test doubling the grid keeps the sign pattern."""
        cfg = SystemConfig(lam=4.0, N=20)
        self.assertEqual(shape_scan(cfg, 0.3, 256).pattern, shape_scan(cfg, 0.3, 512).pattern)

    def test_low_load(self):
        """Test a lightly loaded system still follows the allowed patterns."""
        scan = shape_scan(SystemConfig(lam=0.1, N=5), 1.0)
        self.assertIn(scan.pattern, ((1, -1), (-1,)))

    def test_small_grid_rejected(self):
        """Test grids under 16 points are rejected."""
        with self.assertRaises(QueueDomainError):
            shape_scan(SystemConfig(lam=1.0, N=2), 1.0, grid_size=8)


class TestUtilities(unittest.TestCase):
    """Test cases for tagged_utility and mm1_utility."""

    def setUp(self):
        self.linear = polynomial_cost(1.0, 1.0)

    def test_tagged_utility(self):
        """Test U = I - c at the symmetric two-server point."""
        cf = polynomial_cost(1.0, 2.0)
        self.assertAlmostEqual(tagged_utility(1.0, 1.0, SystemConfig(lam=1.0, N=2), cf), -0.5, places=12)

    def test_mm1_value(self):
        """Test U(1) = -1/2 for λ = 1/2 and c(μ) = μ."""
        self.assertAlmostEqual(mm1_utility(1.0, 0.5, self.linear), -0.5, places=14)

    def test_mm1_stationary_point(self):
        """Test the lone server optimum sits at √(λ/c')."""
        mu = np.sqrt(0.5)
        slope = central_difference(lambda x: mm1_utility(x, 0.5, self.linear), mu, 1e-6)
        self.assertAlmostEqual(slope, 0.0, delta=1e-8)

    def test_mm1_near_stability_boundary(self):
        """Test U → -c(λ) as μ → λ."""
        self.assertAlmostEqual(mm1_utility(0.5 * (1 + 1e-9), 0.5, self.linear), -0.5, delta=1e-6)

    def test_mm1_unstable(self):
        """Test μ <= λ is rejected."""
        with self.assertRaises(QueueDomainError):
            mm1_utility(0.5, 0.5, self.linear)


if __name__ == "__main__":
    unittest.main()
