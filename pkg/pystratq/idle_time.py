import logging

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict

from pystratq.core_types import (
    CostFunction,
    QueueDomainError,
    RateArray,
    SystemConfig,
    TaggedProfile,
    check_profile,
    stability_floor,
)
from pystratq.special_functions import erlang_c

logger = logging.getLogger(__name__)

SHAPE_CLEARANCE = 1e-4
SHAPE_SPAN = 10.0


class IdleDerivatives(BaseModel):
    model_config = ConfigDict(frozen=True)

    I: float
    dI: float
    d2I: float


class ShapeScan(BaseModel):
    """Sign pattern of ∂²I/∂μ1² along a grid of tagged-server rates."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mu1_grid: np.ndarray
    signs: np.ndarray
    threshold_bracket: tuple[float, float] | None
    concave_throughout: bool
    sign_changes: int
    convex_part_decreasing: bool

    @property
    def pattern(self) -> tuple[int, ...]:
        """The signs with consecutive repeats collapsed, e.g. (1, -1)."""
        runs: list[int] = []
        for s in self.signs.tolist():
            if not runs or runs[-1] != s:
                runs.append(s)
        return tuple(runs)


def _tagged_terms(mu1: ArrayLike, mu: float, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu1 = np.asarray(mu1, dtype=float)
    lam, n = cfg.lam, cfg.N
    rho = lam / mu
    x = rho / n
    c = erlang_c(n, rho)
    t = mu1 / mu
    d = n - (rho + 1.0 - t)

    idle = (1.0 - x) / (1.0 - x * (1.0 - 1.0 / t) * (1.0 + c / d))
    idle = np.where(mu1 == mu, 1.0 - x, idle)

    load = lam / (n - rho)
    first = 1.0 + c / d + (1.0 - t) * t * c / d**2
    d_idle = idle**2 / mu1**2 * load * first

    second = (1.0 - rho * c / d**2) * (1.0 + c / d) + (n - (1.0 - t) ** 2) * t * c / d**3
    d2_idle = -2.0 * idle**3 / mu1**3 * load * second
    return idle, d_idle, d2_idle


def idle_probability(profile: TaggedProfile, cfg: SystemConfig) -> float:
    """Steady-state probability that the tagged server is idle under Random routing."""
    check_profile(profile, cfg)
    idle, _, _ = _tagged_terms(profile.mu1, profile.mu, cfg)
    return float(idle)


def idle_derivatives(profile: TaggedProfile, cfg: SystemConfig) -> IdleDerivatives:
    check_profile(profile, cfg)
    idle, d_idle, d2_idle = _tagged_terms(profile.mu1, profile.mu, cfg)
    return IdleDerivatives(I=float(idle), dI=float(d_idle), d2I=float(d2_idle))


def idle_curve(mu1: ArrayLike, mu: float, cfg: SystemConfig) -> RateArray:
    """Vectorized idle probability over many tagged rates at a fixed common rate."""
    if mu <= cfg.min_rate:
        raise QueueDomainError(f"common rate {mu} must exceed λ/N = {cfg.min_rate}")
    mu1 = np.asarray(mu1, dtype=float)
    floor = stability_floor(cfg, mu)
    if np.any(mu1 <= floor):
        raise QueueDomainError(f"tagged rates must exceed the stability floor {floor}")
    return _tagged_terms(mu1, mu, cfg)[0][()]


def tagged_utility(mu1: ArrayLike, mu: float, cfg: SystemConfig, cf: CostFunction) -> RateArray:
    """U(μ1, μ) = I(μ1, μ) - c(μ1)."""
    return (np.asarray(idle_curve(mu1, mu, cfg)) - np.asarray(cf.value(mu1)))[()]


def shape_scan(cfg: SystemConfig, mu: float, grid_size: int = 256) -> ShapeScan:
    if mu <= cfg.min_rate:
        raise QueueDomainError(f"common rate {mu} must exceed λ/N = {cfg.min_rate}")
    if grid_size < 16:
        raise QueueDomainError(f"grid_size must be at least 16, got {grid_size}")

    floor = stability_floor(cfg, mu)
    grid = floor + np.geomspace(SHAPE_CLEARANCE * mu, SHAPE_SPAN * mu, grid_size)
    _, _, d2 = _tagged_terms(grid, mu, cfg)
    signs = np.sign(d2).astype(np.int8)

    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    convex = signs > 0
    bracket = None
    if convex.any() and not convex.all():
        last = int(np.flatnonzero(convex).max())
        bracket = (float(grid[last]), float(grid[last + 1]))
    # ∂²I > 0 must come with ∂³I < 0
    forward = np.diff(d2)
    decreasing = bool(np.all(forward[convex[:-1]] < 0))

    logger.debug("shape scan λ=%g N=%d μ=%g: %d sign change(s), bracket %s", cfg.lam, cfg.N, mu, changes, bracket)
    return ShapeScan(
        mu1_grid=grid,
        signs=signs,
        threshold_bracket=bracket,
        concave_throughout=not convex.any(),
        sign_changes=changes,
        convex_part_decreasing=decreasing,
    )


def mm1_utility(mu: float, lam: float, cf: CostFunction) -> float:
    """Utility of a lone server: its idle fraction 1 - λ/μ minus its effort cost."""
    if mu <= lam:
        raise QueueDomainError(f"M/M/1 needs μ > λ, got μ={mu}, λ={lam}")
    return 1.0 - lam / mu - float(cf.value(mu))
