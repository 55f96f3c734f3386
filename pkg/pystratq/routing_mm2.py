"""Two strategic servers under rate-based and probabilistic routing.

When both servers are idle an arriving job goes to server 1 with probability ``p``. The r-routing
policy picks p = μ1^r / (μ1^r + μ2^r); r = 0 is Random, r → +∞ is Fastest-Server-First (FSF) and
r → -∞ is Slowest-Server-First (SSF).
"""

import logging
from collections.abc import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize, special

from pystratq.core_types import CostFunction, QueueDomainError, SystemConfig
from pystratq.special_functions import mean_wait

logger = logging.getLogger(__name__)

BEST_RESPONSE_GRID = 10_000
BISECTION_XTOL = 1e-10
GLOBAL_MAX_TOLERANCE = 1e-9
MAX_DOUBLINGS = 200


class RoutingPreconditionError(QueueDomainError):
    """Raised when c'(λ/2) < 1/λ fails, so the r-routing equilibrium map is not defined."""


class Mm2Profile(BaseModel):
    """Arrival rate, both service rates and exactly one of the policy parameters p or r."""

    model_config = ConfigDict(frozen=True)

    lam: float = Field(ge=0)
    mu1: float = Field(gt=0)
    mu2: float = Field(gt=0)
    p: float | None = Field(default=None, ge=0, le=1)
    r: float | None = None

    @model_validator(mode="after")
    def _one_policy(self) -> "Mm2Profile":
        if (self.p is None) == (self.r is None):
            raise ValueError("exactly one of p and r must be given")
        return self

    @property
    def routing_p(self) -> float:
        return self.p if self.p is not None else routing_probability(self.mu1, self.mu2, self.r or 0.0)


class Mm2SteadyState(BaseModel):
    model_config = ConfigDict(frozen=True)

    pi0: float
    pi1_first: float = Field(description="Only server 1 busy")
    pi1_second: float = Field(description="Only server 2 busy")
    pi_both: float = Field(description="Both busy with two jobs present")
    ratio: float = Field(description="λ/(μ1+μ2), the geometric tail ratio beyond two jobs")

    def pi_k(self, k: int) -> float:
        """Probability of k ≥ 2 jobs in system."""
        if k < 2:
            raise QueueDomainError(f"pi_k covers k >= 2, got {k}")
        return self.pi_both * self.ratio ** (k - 2)

    @property
    def tail_mass(self) -> float:
        return self.pi_both / (1.0 - self.ratio)

    @property
    def idle(self) -> tuple[float, float]:
        return self.pi0 + self.pi1_second, self.pi0 + self.pi1_first


class Mm2EquilibriumBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu_dagger: float
    mu_bar: float
    r_lower: float


class RoutingEquilibrium(BaseModel):
    model_config = ConfigDict(frozen=True)

    r: float
    mu: float
    utility: float
    mean_response: float
    best_response_gap: float = Field(description="Best grid deviation utility minus the equilibrium utility")


def _check_stable(lam: float, mu1: float, mu2: float) -> None:
    if mu1 + mu2 <= lam:
        raise QueueDomainError(f"unstable M/M/2: μ1 + μ2 = {mu1 + mu2} must exceed λ = {lam}")


def _check_half_load(mu: float, lam: float) -> None:
    if mu <= lam / 2:
        raise QueueDomainError(f"μ = {mu} must exceed λ/2 = {lam / 2}")


def check_validity(lam: float, cf: CostFunction) -> None:
    if not float(cf.d1(lam / 2)) < 1.0 / lam:
        raise RoutingPreconditionError(
            f"r-routing analysis needs c'(λ/2) < 1/λ; got c'({lam / 2:g}) = {float(cf.d1(lam / 2)):g} >= {1.0 / lam:g}"
        )


def routing_probability(mu1: float, mu2: float, r: float) -> float:
    """μ1^r / (μ1^r + μ2^r), written as a logistic so large |r| does not overflow."""
    return float(special.expit(r * np.log(mu1 / mu2)))


def _idle_first(lam: float, mu1: float, mu2: float, p: float) -> float:
    s = mu1 + mu2
    q = 1.0 - p
    numerator = mu1 * (s - lam) * ((lam + mu2) ** 2 + mu1 * mu2 + q * lam * s)
    denominator = mu1 * mu2 * s**2 + lam * s * (mu2**2 + 2 * mu1 * mu2 + q * (mu1**2 - mu2**2)) + lam**2 * (mu1**2 + mu2**2)
    return numerator / denominator


def idle_p(lam: float, mu1: float, mu2: float, p: float) -> tuple[float, float]:
    """Idle probabilities (I1, I2) when an empty system sends a job to server 1 with probability p."""
    _check_stable(lam, mu1, mu2)
    if not 0.0 <= p <= 1.0:
        raise QueueDomainError(f"routing probability must lie in [0, 1], got {p}")
    return _idle_first(lam, mu1, mu2, p), _idle_first(lam, mu2, mu1, 1.0 - p)


def mm2_steady_state(profile: Mm2Profile) -> Mm2SteadyState:
    lam, mu1, mu2 = profile.lam, profile.mu1, profile.mu2
    _check_stable(lam, mu1, mu2)
    p = profile.routing_p
    s = mu1 + mu2
    # balance at the two single-job states with π0 = 1, then the cut between 2 and 1 jobs
    a11, a12 = lam + mu1 - mu2 * lam / s, -mu2 * lam / s
    a21, a22 = -mu1 * lam / s, lam + mu2 - mu1 * lam / s
    b1, b2 = p * lam, (1.0 - p) * lam
    det = a11 * a22 - a12 * a21
    first = (b1 * a22 - a12 * b2) / det
    second = (a11 * b2 - a21 * b1) / det
    both = lam * (first + second) / s
    ratio = lam / s
    total = 1.0 + first + second + both / (1.0 - ratio)
    return Mm2SteadyState(
        pi0=1.0 / total,
        pi1_first=first / total,
        pi1_second=second / total,
        pi_both=both / total,
        ratio=ratio,
    )


def idle_r(profile: Mm2Profile) -> tuple[float, float]:
    if profile.r is None:
        raise QueueDomainError("idle_r needs a rate-based profile (r set)")
    return idle_p(profile.lam, profile.mu1, profile.mu2, routing_probability(profile.mu1, profile.mu2, profile.r))


def symmetric_foc_derivative(mu: float, lam: float, r: float) -> float:
    """∂I1/∂μ1 at μ1 = μ2 = μ under r-routing."""
    _check_half_load(mu, lam)
    return lam * (4 * lam + 4 * mu + lam * r - 2 * mu * r) / (4 * mu * (lam + mu) * (lam + 2 * mu))


def phi(mu: float, lam: float, cf: CostFunction) -> float:
    """The r whose symmetric first-order condition is solved by μ."""
    _check_half_load(mu, lam)
    check_validity(lam, cf)
    return _phi(mu, lam, cf)


def _phi(mu: float, lam: float, cf: CostFunction) -> float:
    return 4 * (lam + mu) / (lam * (lam - 2 * mu)) * (mu * (lam + 2 * mu) * float(cf.d1(mu)) - lam)


def _grow(start: float, done: Callable[[float], bool]) -> float:
    mu = start
    for _ in range(MAX_DOUBLINGS):
        if done(mu):
            return mu
        mu *= 2.0
    raise QueueDomainError(f"no bracket found from {start}")


def bounds(lam: float, cf: CostFunction) -> Mm2EquilibriumBounds:
    """Rates μ† and μ̄ bracketing every symmetric equilibrium, and r̲ = φ(μ̄).

    μ† maximizes the symmetric utility 1 - λ/(2μ) - c(μ); μ̄ > μ† is where that utility falls back
    to its value at λ/2.
    """
    check_validity(lam, cf)
    half = lam / 2

    def stationary(mu: float) -> float:
        return mu * mu * float(cf.d1(mu)) - half

    def above_floor(mu: float) -> float:
        return 1.0 - half / mu - float(cf.value(mu)) + float(cf.value(half))

    hi = _grow(2.0 * half, lambda mu: stationary(mu) > 0)
    mu_dagger = float(optimize.brentq(stationary, half, hi, xtol=BISECTION_XTOL * 1e-2))
    hi = _grow(2.0 * mu_dagger, lambda mu: above_floor(mu) < 0)
    mu_bar = float(optimize.brentq(above_floor, mu_dagger, hi, xtol=BISECTION_XTOL * 1e-2))
    r_lower = _phi(mu_bar, lam, cf)
    logger.debug("λ=%g bounds: μ†=%.10g μ̄=%.10g r̲=%.6g", lam, mu_dagger, mu_bar, r_lower)
    return Mm2EquilibriumBounds(mu_dagger=mu_dagger, mu_bar=mu_bar, r_lower=r_lower)


def r_routing_utility(mu1: np.ndarray, mu2: float, lam: float, r: float, cf: CostFunction) -> np.ndarray:
    """U1 = I1 - c(μ1) for server 1 deviating to each rate in ``mu1`` against server 2 at μ2."""
    mu1 = np.asarray(mu1, dtype=float)
    p = special.expit(r * np.log(mu1 / mu2))
    return _idle_first(lam, mu1, mu2, p) - np.asarray(cf.value(mu1))


def mean_response(mu_star: float, lam: float) -> float:
    """Mean sojourn time W̄ + 1/μ of a symmetric M/M/2 queue."""
    if 2 * mu_star <= lam:
        raise QueueDomainError(f"unstable M/M/2: 2μ = {2 * mu_star} must exceed λ = {lam}")
    return mean_wait(SystemConfig(lam=lam, N=2), mu_star) + 1.0 / mu_star


def equilibrium_for_r(
    r: float, lam: float, cf: CostFunction, grid: int = BEST_RESPONSE_GRID
) -> RoutingEquilibrium | None:
    """The symmetric equilibrium φ⁻¹(r), or None when it does not exist.

    φ is strictly decreasing on (λ/2, μ̄], so the inverse is found by bisection; the candidate is
    then accepted only if no deviation on a grid over (λ/2, μ̄ + 1] does better.
    """
    b = bounds(lam, cf)
    if r < b.r_lower:
        logger.debug("r=%g below r̲=%g at λ=%g: no equilibrium", r, b.r_lower, lam)
        return None
    lo = 0.5 * lam * (1.0 + 1e-12)
    if _phi(lo, lam, cf) < r:
        logger.debug("r=%g exceeds φ near λ/2 at λ=%g", r, lam)
        return None
    mu = float(optimize.brentq(lambda m: _phi(m, lam, cf) - r, lo, b.mu_bar, xtol=BISECTION_XTOL * 1e-2))

    utility = 1.0 - lam / (2 * mu) - float(cf.value(mu))
    rates = np.linspace(0.5 * lam * (1.0 + 1e-9), b.mu_bar + 1.0, grid)
    gap = float(np.max(r_routing_utility(rates, mu, lam, r, cf))) - utility
    if gap > GLOBAL_MAX_TOLERANCE:
        logger.info("r=%g: φ⁻¹(r)=%.8g is not a global best response (gap %.3g)", r, mu, gap)
        return None
    return RoutingEquilibrium(r=r, mu=mu, utility=utility, mean_response=mean_response(mu, lam), best_response_gap=gap)


def fsf_ssf_gap_closed_form(mu: float, lam: float) -> float:
    _check_half_load(mu, lam)
    return lam * (2 * mu - lam) / (2 * (mu + lam) * (2 * mu + lam))


def fsf_ssf_gap(mu: float, lam: float) -> float:
    """I1(μ, μ; p=0) - I1(μ, μ; p=1/2).

    At any symmetric point a server gains this much idle time by slowing down marginally under FSF
    (or speeding up under SSF), so neither policy admits a symmetric equilibrium.
    """
    _check_half_load(mu, lam)
    return idle_p(lam, mu, mu, 0.0)[0] - idle_p(lam, mu, mu, 0.5)[0]


def _extreme_p(mu1: float, mu2: float, fast_first: bool) -> float:
    if mu1 == mu2:
        return 0.5
    return 1.0 if (mu1 > mu2) == fast_first else 0.0


def fsf_utility(mu1: float, mu2: float, lam: float, cf: CostFunction) -> float:
    """Server 1's utility under Fastest-Server-First; discontinuous at μ1 = μ2."""
    return idle_p(lam, mu1, mu2, _extreme_p(mu1, mu2, True))[0] - float(cf.value(mu1))


def ssf_utility(mu1: float, mu2: float, lam: float, cf: CostFunction) -> float:
    return idle_p(lam, mu1, mu2, _extreme_p(mu1, mu2, False))[0] - float(cf.value(mu1))
