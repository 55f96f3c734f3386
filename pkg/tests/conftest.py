"""Shared pytest fixtures and helpers for pystratq tests."""

from collections.abc import Callable, Iterator

import numpy as np
import pytest

from pystratq.core_types import CostFunction, EconomicParams, SystemConfig, polynomial_cost


@pytest.fixture
def quadratic_cost() -> CostFunction:
    """c(μ) = μ², the cost used by most numerical examples."""
    return polynomial_cost(1.0, 2.0)


@pytest.fixture
def linear_cost() -> CostFunction:
    return polynomial_cost(1.0, 1.0)


@pytest.fixture
def unit_econ() -> EconomicParams:
    return EconomicParams(c_S=1.0, w=1.0)


def central_difference(f: Callable[[float], float], x: float, h: float) -> float:
    """Central difference (f(x+h) - f(x-h)) / 2h."""
    return (f(x + h) - f(x - h)) / (2 * h)


def random_tagged_instances(seed: int, count: int, min_gap: float = 0.05) -> Iterator[tuple[SystemConfig, float, float]]:
    """Random stable (cfg, μ1, μ) triples for the mildly heterogeneous system.

    Args:
        seed: Seed for numpy's default generator.
        count: Number of instances to yield.
        min_gap: Clearance kept between μ1 and the stability floor.

    Yields:
        tuple: (SystemConfig, tagged rate μ1, common rate μ)
    """
    rng = np.random.default_rng(seed)
    for _ in range(count):
        N = int(rng.integers(2, 9))
        lam = float(rng.uniform(0.2, 5.0))
        mu = lam / N * float(rng.uniform(1.1, 3.0))
        floor = max(lam - (N - 1) * mu, 0.0)
        mu1 = floor + min_gap + float(rng.uniform(0.0, 2.0)) * mu
        yield SystemConfig(lam=lam, N=N), mu1, mu
