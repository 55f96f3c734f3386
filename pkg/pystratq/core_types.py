import logging
from collections.abc import Callable, Sequence
from functools import partial
from typing import Annotated, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

RateArray = float | NDArray[np.float64]
CostCallable = Callable[[ArrayLike], RateArray]


class StrategicQueueError(Exception):
    """Base exception for pystratq errors."""


class QueueDomainError(StrategicQueueError, ValueError):
    """Raised when a formula is evaluated outside the region where it is defined."""


class QueueConfigurationError(StrategicQueueError, ValueError):
    """Raised when a cost spec, sweep spec or config document cannot be used."""


def _power_term(mu: ArrayLike, coefficient: float, exponent: float) -> RateArray:
    mu = np.asarray(mu, dtype=float)
    if coefficient == 0.0:
        return np.zeros_like(mu)[()]
    return (coefficient * np.power(mu, exponent))[()]


class PolynomialFamily(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: Literal["polynomial"] = "polynomial"
    c_E: float = Field(gt=0)
    p: float = Field(ge=1)


class PoaFamily(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: Literal["poa"] = "poa"
    q: float = Field(gt=1)


CostFamily = Annotated[PolynomialFamily | PoaFamily, Field(discriminator="family")]


class CostFunction(BaseModel):
    """Effort cost c(μ) supplied together with its first three derivatives.

    Every callable accepts a scalar or a numpy array of rates and returns the same shape.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    value: CostCallable
    d1: CostCallable
    d2: CostCallable
    d3: CostCallable
    family: CostFamily | None = None

    def __call__(self, mu: ArrayLike) -> RateArray:
        return self.value(mu)

    @property
    def label(self) -> str:
        match self.family:
            case PolynomialFamily(c_E=c_E, p=p):
                return f"poly:{c_E:g}:{p:g}"
            case PoaFamily(q=q):
                return f"poa:{q:g}"
            case _:
                return "custom"


def polynomial_cost(c_E: float, p: float) -> CostFunction:
    """c(μ) = c_E μ^p."""
    family = PolynomialFamily(c_E=c_E, p=p)
    return CostFunction(
        value=partial(_power_term, coefficient=c_E, exponent=p),
        d1=partial(_power_term, coefficient=c_E * p, exponent=p - 1),
        d2=partial(_power_term, coefficient=c_E * p * (p - 1), exponent=p - 2),
        d3=partial(_power_term, coefficient=c_E * p * (p - 1) * (p - 2), exponent=p - 3),
        family=family,
    )


def poa_cost(q: float) -> CostFunction:
    """c(μ) = μ^q / q."""
    family = PoaFamily(q=q)
    return CostFunction(
        value=partial(_power_term, coefficient=1.0 / q, exponent=q),
        d1=partial(_power_term, coefficient=1.0, exponent=q - 1),
        d2=partial(_power_term, coefficient=q - 1, exponent=q - 2),
        d3=partial(_power_term, coefficient=(q - 1) * (q - 2), exponent=q - 3),
        family=family,
    )


def custom_cost(value: CostCallable, d1: CostCallable, d2: CostCallable, d3: CostCallable) -> CostFunction:
    return CostFunction(value=value, d1=d1, d2=d2, d3=d3)


class SystemConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lam: float = Field(gt=0, description="Arrival rate λ")
    N: int = Field(ge=1, description="Number of servers")

    @property
    def min_rate(self) -> float:
        """λ/N, the smallest common rate that keeps a symmetric system stable."""
        return self.lam / self.N


class EconomicParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    c_S: float = Field(default=1.0, gt=0, description="Staffing cost per server per unit time")
    w: float = Field(default=1.0, gt=0, description="Waiting cost per customer per unit time")


class TaggedProfile(BaseModel):
    """One tagged server at rate mu1 facing N-1 servers at the common rate mu."""

    model_config = ConfigDict(frozen=True)

    mu1: float = Field(gt=0)
    mu: float = Field(gt=0)


def stability_floor(cfg: SystemConfig, mu: float) -> float:
    return max(cfg.lam - (cfg.N - 1) * mu, 0.0)


def check_profile(profile: TaggedProfile, cfg: SystemConfig) -> None:
    if profile.mu <= cfg.min_rate:
        raise QueueDomainError(f"common rate {profile.mu} must exceed λ/N = {cfg.min_rate}")
    floor = stability_floor(cfg, profile.mu)
    if profile.mu1 <= floor:
        raise QueueDomainError(f"tagged rate {profile.mu1} must exceed the stability floor {floor}")


class CostValidationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    passed: bool
    violations: tuple[str, ...]
    max_mismatch: dict[str, float]
    linear_terms_vanish: bool


def default_validation_grid(cfg: SystemConfig, points: int = 64) -> NDArray[np.float64]:
    return np.geomspace(cfg.lam / (2 * cfg.N), 4.0, points)


def validate_cost(cf: CostFunction, grid: Sequence[float] | NDArray[np.float64], tolerance: float = 1e-5) -> CostValidationReport:
    """Sample a cost function on a grid and check its shape and supplied derivatives.

    Args:
        cf: The cost function to check.
        grid: Rates to sample, all strictly positive.
        tolerance: Largest accepted relative mismatch between a supplied derivative and the
            central difference of the next-lower derivative.

    Returns:
        CostValidationReport listing every violation found.
    """
    mu = np.asarray(grid, dtype=float)
    if mu.size == 0:
        raise QueueDomainError("validation grid is empty")
    if np.any(mu <= 0):
        raise QueueDomainError("validation grid rates must be strictly positive")

    levels = [np.asarray(f(mu), dtype=float) for f in (cf.value, cf.d1, cf.d2, cf.d3)]
    violations: list[str] = []
    for name, values, strict in (("c'", levels[1], True), ("c''", levels[2], False), ("c'''", levels[3], False)):
        bad = values <= 0 if strict else values < 0
        if np.any(bad):
            kind = {"c'": "monotonicity", "c''": "convexity", "c'''": "third-derivative sign"}[name]
            violations.append(f"{kind} violation: {name} has the wrong sign at {int(bad.sum())} grid point(s)")

    h = 1e-5 * mu
    funcs = (cf.value, cf.d1, cf.d2)
    mismatch: dict[str, float] = {}
    for name, lower, supplied in zip(("d1", "d2", "d3"), funcs, levels[1:], strict=True):
        fd = (np.asarray(lower(mu + h), dtype=float) - np.asarray(lower(mu - h), dtype=float)) / (2 * h)
        rel = np.abs(fd - supplied) / np.maximum(np.abs(supplied), 1e-8)
        mismatch[name] = float(rel.max())
        if mismatch[name] > tolerance:
            violations.append(f"derivative mismatch: {name} differs from finite differences by {mismatch[name]:.3g}")

    linear = bool(np.all(levels[2] == 0) and np.all(levels[3] == 0))
    logger.debug("validated cost %s on %d points: %s", cf.label, mu.size, violations or "ok")
    return CostValidationReport(
        passed=not violations,
        violations=tuple(violations),
        max_mismatch=mismatch,
        linear_terms_vanish=linear,
    )
