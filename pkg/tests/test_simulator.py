"""Unit tests for the discrete-event simulator."""

import csv
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from pystratq.core_types import QueueDomainError
from pystratq.ctmc_exact import IdleOrderPolicy, RateRouting, product_form
from pystratq.routing_mm2 import Mm2Profile, idle_p, idle_r
from pystratq.simulator import RouteTable, SimConfig, compare_policies, run, write_replications_csv


class TestSimConfig(unittest.TestCase):
    """Test cases for SimConfig validation."""

    def test_rates_positive(self):
        """Test empty or non-positive rate lists are rejected."""
        with self.assertRaises(ValidationError):
            SimConfig(lam=1.0, rates=(1.0, 0.0), horizon=10.0)
        with self.assertRaises(ValidationError):
            SimConfig(lam=1.0, rates=(), horizon=10.0)

    def test_horizon_and_warmup(self):
        """Test the horizon is positive and the warm-up a fraction below one."""
        with self.assertRaises(ValidationError):
            SimConfig(lam=1.0, rates=(1.0,), horizon=0.0)
        with self.assertRaises(ValidationError):
            SimConfig(lam=1.0, rates=(1.0,), horizon=10.0, warmup=1.0)

    def test_unstable(self):
        """Test Σμ <= λ is rejected at run time."""
        with self.assertRaises(QueueDomainError):
            run(SimConfig(lam=3.0, rates=(1.0, 2.0), horizon=10.0, replications=1))


class TestRun(unittest.TestCase):
    """Test cases for run and compare_policies."""

    def test_no_arrivals(self):
        """Test λ = 0 leaves every server idle for the whole window."""
        estimate = run(SimConfig(lam=0.0, rates=(1.0, 2.0), horizon=100.0, replications=2))
        self.assertEqual(estimate.idle_fractions, (1.0, 1.0))
        self.assertEqual(estimate.served, 0)
        self.assertEqual(estimate.mean_wait, 0.0)

    def test_reproducible(self):
        """Test the same seed gives identical estimates."""
        cfg = SimConfig(lam=1.0, rates=(1.0, 2.0), horizon=2000.0, replications=2, seed=7)
        self.assertEqual(run(cfg).model_dump(), run(cfg).model_dump())

    def test_seeds_follow_replication_index(self):
        """Test replication i uses seed + i."""
        estimate = run(SimConfig(lam=1.0, rates=(1.0, 2.0), horizon=500.0, replications=3, seed=40))
        self.assertEqual([r.seed for r in estimate.replications], [40, 41, 42])

    def test_single_replication_half_width(self):
        """Test one replication has no finite confidence interval."""
        estimate = run(SimConfig(lam=1.0, rates=(1.0, 2.0), horizon=500.0, replications=1))
        self.assertTrue(math.isinf(estimate.mean_wait_half_width))

    def test_symmetric_rates_ignore_r(self):
        """Test r-routing policies coincide with Random when the rates are equal."""
        base = SimConfig(lam=1.2, rates=(1.0, 1.0), horizon=2000.0, replications=2, seed=3)
        policies = [RateRouting(r=-2.0), RateRouting(r=0.0), RateRouting(r=1.0), IdleOrderPolicy(kind="random")]
        estimates = compare_policies(base, policies)
        reference = estimates["random"].model_dump(exclude={"policy"})
        for name in ("r=-2", "r=0", "r=1"):
            self.assertEqual(estimates[name].model_dump(exclude={"policy"}), reference)

    def test_fastest_server_first_idles_fast_server_less(self):
        """Test FSF and SSF idle fractions of the fast server against the closed form."""
        base = SimConfig(lam=1.0, rates=(1.5, 0.7), horizon=20_000.0, replications=4)
        estimates = compare_policies(base, [RateRouting(extreme="fsf"), RateRouting(extreme="ssf")])
        self.assertLess(estimates["fsf"].idle_fractions[0], estimates["ssf"].idle_fractions[0])
        self.assertAlmostEqual(estimates["fsf"].idle_fractions[0], idle_p(1.0, 1.5, 0.7, 1.0)[0], delta=0.02)
        self.assertAlmostEqual(estimates["ssf"].idle_fractions[0], idle_p(1.0, 1.5, 0.7, 0.0)[0], delta=0.02)

    def test_worker_pool_matches_serial(self):
        """Test replications on a process pool merge to the serial result."""
        cfg = SimConfig(lam=1.0, rates=(1.0, 2.0), horizon=1000.0, replications=2, seed=11)
        parallel = run(cfg.model_copy(update={"workers": 2}))
        self.assertEqual(run(cfg).model_dump(), parallel.model_dump())


class TestRouteTable(unittest.TestCase):
    """Test cases for the cached routing distributions."""

    def setUp(self):
        self.rng = np.random.default_rng(5)

    def _orderings(self, n, count):
        for _ in range(count):
            k = int(self.rng.integers(1, n + 1))
            yield tuple(int(i) for i in self.rng.permutation(n)[:k])

    def test_idle_order_policy_keyed_by_count(self):
        """Test an idle-order policy stores one entry per idle count however many orderings it sees."""
        table = RouteTable(IdleOrderPolicy(kind="weighted"), np.ones(20))
        for idle in self._orderings(20, 2000):
            k = len(idle)
            expected = np.cumsum(np.arange(k, 0, -1) / (k * (k + 1) / 2))
            np.testing.assert_allclose(table(idle), expected)
        self.assertLessEqual(table.size, 20)

    def test_overrides_keyed_by_set(self):
        """Test an override applies to every ordering of its set and leaves other sets alone."""
        policy = IdleOrderPolicy(kind="lisf", overrides={(0, 1): (0.25, 0.75)})
        table = RouteTable(policy, np.ones(3))
        np.testing.assert_allclose(table((1, 0)), [0.25, 1.0])
        np.testing.assert_allclose(table((0, 1)), [0.25, 1.0])
        np.testing.assert_allclose(table((2, 1)), [1.0, 1.0])
        self.assertEqual(table.size, 2)

    def test_rate_routing_cache_is_bounded(self):
        """Test rate routing keeps at most maxsize orderings and still returns the direct distribution."""
        rates = self.rng.uniform(0.5, 2.0, size=12)
        policy = RateRouting(r=1.5)
        table = RouteTable(policy, rates, maxsize=8)
        for idle in self._orderings(12, 500):
            np.testing.assert_allclose(table(idle), np.cumsum(policy.route_probabilities(idle, rates)))
        self.assertLessEqual(table.size, 8)

    def test_many_servers(self):
        """Test a twenty-server run idles each server about 1 - λ/Σμ of the time on average."""
        estimate = run(SimConfig(lam=10.0, rates=(1.0,) * 20, horizon=500.0, replications=2, seed=2))
        self.assertAlmostEqual(sum(estimate.idle_fractions) / 20, 0.5, delta=0.05)
        self.assertTrue(all(0.0 <= x <= 1.0 for x in estimate.idle_fractions))


class TestReplicationCsv(unittest.TestCase):
    """Test cases for write_replications_csv."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_rows(self):
        """Test one row per replication with per-server idle columns."""
        estimate = run(SimConfig(lam=1.0, rates=(1.0, 2.0), horizon=500.0, replications=3))
        path = write_replications_csv(estimate, Path(self.tmp.name) / "raw.csv")
        with path.open() as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0][:5], ["policy", "replication", "seed", "idle_0", "idle_1"])
        self.assertEqual(len(rows), 4)
        self.assertEqual(rows[1][0], "random")


@pytest.mark.slow
class TestAgreementWithExact(unittest.TestCase):
    """Simulation estimates against exact steady states."""

    @pytest.mark.timeout(600)
    def test_lisf_two_servers(self):
        """Test LISF idles server 0 for 10/17 of the time at rates (1, 2), λ = 1."""
        estimate = run(SimConfig(lam=1.0, rates=(1.0, 2.0), policy=IdleOrderPolicy(kind="lisf"), horizon=50_000.0))
        self.assertLessEqual(abs(estimate.idle_fractions[0] - 10.0 / 17.0), 3 * estimate.idle_half_widths[0])

    @pytest.mark.timeout(600)
    def test_collapse_by_simulation(self):
        """Test Random, LISF and SISF all match the product form on rates (1, 1.5, 2.3)."""
        rates = (1.0, 1.5, 2.3)
        exact = product_form(rates, 2.0).idle_fractions
        base = SimConfig(lam=2.0, rates=rates, horizon=20_000.0)
        policies = [IdleOrderPolicy(kind=k) for k in ("random", "lisf", "sisf")]
        for estimate in compare_policies(base, policies).values():
            for idle, hw, target in zip(estimate.idle_fractions, estimate.idle_half_widths, exact, strict=True):
                self.assertLessEqual(abs(idle - target), 3 * hw, estimate.policy)

    @pytest.mark.timeout(600)
    def test_littles_law(self):
        """Test L_q ≈ λ W_q."""
        estimate = run(SimConfig(lam=2.5, rates=(1.0, 1.5, 0.8), horizon=20_000.0, replications=8))
        tolerance = 3 * (estimate.mean_queue_length_half_width + 2.5 * estimate.mean_wait_half_width)
        self.assertLessEqual(abs(estimate.mean_queue_length - 2.5 * estimate.mean_wait), tolerance + 0.01 * estimate.mean_queue_length)

    @pytest.mark.timeout(1800)
    def test_rate_routing_long_run(self):
        """Test r = 1 at rates (1.2, 0.8), λ = 1 over T = 5e5 against the closed form."""
        cfg = SimConfig(lam=1.0, rates=(1.2, 0.8), policy=RateRouting(r=1.0), horizon=500_000.0, replications=10, workers=2)
        estimate = run(cfg)
        exact = idle_r(Mm2Profile(lam=1.0, mu1=1.2, mu2=0.8, r=1.0))
        for idle, hw, target in zip(estimate.idle_fractions, estimate.idle_half_widths, exact, strict=True):
            self.assertLessEqual(abs(idle - target), 3 * hw)


if __name__ == "__main__":
    unittest.main()
