"""Staffing for strategic servers.

Linear staffing N = λ/a keeps a symmetric equilibrium alive as λ grows exactly when the limiting
first-order condition a(μ - a) = μ³c'(μ) has a root, and the best such slope is a*. This module
computes the limiting roots and a*, the rule N^ao = ⌈λ/a*⌉, the exact finite-λ optimum N^opt, and the
square-root staffing level of a system whose servers are not strategic.
"""

import logging
import math
import warnings
from collections.abc import Callable
from typing import Literal

from pydantic import BaseModel, ConfigDict
from scipy import optimize

from pystratq.core_types import CostFunction, EconomicParams, QueueDomainError, SystemConfig
from pystratq.equilibrium import EquilibriumReport, solve
from pystratq.special_functions import y_star

logger = logging.getLogger(__name__)

TANGENCY_TOLERANCE = 1e-12
ADMISSIBLE_RATE_CAP = 10.0
MAX_DOUBLINGS = 200

Selection = Literal["largest", "lowest"]


class LimitingFocRoots(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: float
    roots: tuple[float, ...]
    tangency: bool


class OptimalSlope(BaseModel):
    """a* together with the limiting rate μ* at which it is attained."""

    model_config = ConfigDict(frozen=True)

    a_star: float
    mu_star: float


class StaffingResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    N: int
    lam: float
    selection: Selection
    report: EquilibriumReport
    mu: float | None
    cost: float | None

    @property
    def feasible(self) -> bool:
        return self.cost is not None


class StaffingSearch(BaseModel):
    model_config = ConfigDict(frozen=True)

    lam: float
    n_ao: int
    n_max: int
    best: StaffingResult | None
    evaluated: tuple[StaffingResult, ...]

    def result_at(self, N: int) -> StaffingResult | None:
        return next((r for r in self.evaluated if r.N == N), None)


def _doubling_bound(start: float, done: Callable[[float], bool]) -> float:
    mu = start
    for _ in range(MAX_DOUBLINGS):
        if done(mu):
            return mu
        mu *= 2.0
    raise QueueDomainError(f"no upper bound found from {start} after {MAX_DOUBLINGS} doublings")


def limiting_foc_roots(a: float, cf: CostFunction) -> LimitingFocRoots:
    """Roots μ > a of a(μ - a) = μ³c'(μ).

    The difference g(μ) = a(μ - a) - μ³c'(μ) is concave for admissible costs, so it is maximized
    once and each side of the maximizer holds at most one root.
    """
    if a <= 0:
        raise QueueDomainError(f"staffing slope must be positive, got {a}")

    def g(mu: float) -> float:
        return a * (mu - a) - mu**3 * float(cf.d1(mu))

    hi = _doubling_bound(2.0 * a, lambda mu: mu**3 * float(cf.d1(mu)) > a * mu)
    res = optimize.minimize_scalar(lambda mu: -g(mu), bounds=(a, hi), method="bounded", options={"xatol": 1e-12})
    peak, g_max = float(res.x), -float(res.fun)
    logger.debug("limiting FOC a=%g: max g=%.3g at μ=%.12g on (a, %g]", a, g_max, peak, hi)

    if abs(g_max) <= TANGENCY_TOLERANCE * a:
        return LimitingFocRoots(a=a, roots=(peak,), tangency=True)
    if g_max < 0:
        return LimitingFocRoots(a=a, roots=(), tangency=False)
    left = float(optimize.brentq(g, a, peak, xtol=1e-15, rtol=1e-14))
    right = float(optimize.brentq(g, peak, hi, xtol=1e-15, rtol=1e-14))
    return LimitingFocRoots(a=a, roots=(left, right), tangency=False)


def optimal_slope(cf: CostFunction) -> OptimalSlope:
    # every root μ of the limiting FOC pairs with slopes a = μ/2·(1 ± √(1 - 4μc'(μ)))
    def slope(mu: float) -> float:
        return 0.5 * mu * (1.0 + math.sqrt(max(0.0, 1.0 - 4.0 * mu * float(cf.d1(mu)))))

    def boundary(mu: float) -> float:
        return 4.0 * mu * float(cf.d1(mu)) - 1.0

    hi = _doubling_bound(1.0, lambda mu: boundary(mu) > 0)
    mu_b = float(optimize.brentq(boundary, 0.0, hi, xtol=1e-15, rtol=1e-14))
    res = optimize.minimize_scalar(lambda mu: -slope(mu), bounds=(0.0, mu_b), method="bounded", options={"xatol": 1e-12})
    logger.debug("a* = %.12g at μ* = %.12g (boundary %.6g)", -res.fun, res.x, mu_b)
    return OptimalSlope(a_star=-float(res.fun), mu_star=float(res.x))


def a_star(cf: CostFunction) -> float:
    return optimal_slope(cf).a_star


def polynomial_closed_form(c_E: float, p: float) -> OptimalSlope:
    """a* and μ* for c(μ) = c_E μ^p."""
    if c_E <= 0 or p < 1:
        raise QueueDomainError(f"closed form needs c_E > 0 and p >= 1, got c_E={c_E}, p={p}")
    base = (p + 1) / (p + 2) * (1.0 / (c_E * p * (p + 2))) ** (1.0 / (p + 1))
    return OptimalSlope(
        a_star=base ** ((p + 1) / p),
        mu_star=((p + 1) / (c_E * p * (p + 2) ** 2)) ** (1.0 / p),
    )


def limiting_cost_per_arrival(cf: CostFunction, econ: EconomicParams) -> float:
    """lim C*(N^ao)/λ = c_S/a*."""
    return econ.c_S / a_star(cf)


def staff_ao(lam: float, cf: CostFunction, slope: float | None = None) -> int:
    if lam <= 0:
        raise QueueDomainError(f"arrival rate must be positive, got {lam}")
    slope = a_star(cf) if slope is None else slope
    return max(1, math.ceil(lam / slope))


def cost_of(
    N: int, lam: float, cf: CostFunction, econ: EconomicParams, selection: Selection = "largest"
) -> StaffingResult:
    """Total cost c_S N + w λ W̄ at the selected symmetric equilibrium of (λ, N).

    ``largest`` picks the fastest equilibrium; ``lowest`` picks the cheapest one. Without a verified
    equilibrium the result is infeasible and ``cost`` is None.
    """
    if N < 2:
        raise QueueDomainError(f"staffing costs are evaluated for N >= 2, got {N}")
    if selection not in ("largest", "lowest"):
        raise QueueDomainError(f"unknown selection rule {selection!r}")
    report = solve(SystemConfig(lam=lam, N=N), cf)
    costs = [(econ.c_S * N + econ.w * lam * p.mean_wait, p.mu) for p in report.equilibria]
    if not costs:
        return StaffingResult(N=N, lam=lam, selection=selection, report=report, mu=None, cost=None)
    cost, mu = max(costs, key=lambda item: item[1]) if selection == "largest" else min(costs)
    return StaffingResult(N=N, lam=lam, selection=selection, report=report, mu=mu, cost=cost)


def is_admissible(result: StaffingResult) -> bool:
    return result.feasible and result.mu is not None and result.mu <= ADMISSIBLE_RATE_CAP


def n_opt_search(lam: float, cf: CostFunction, econ: EconomicParams, selection: Selection = "largest") -> StaffingSearch:
    """Cheapest staffing level among those admitting a symmetric equilibrium.

    Every N from 2 upwards is evaluated, so gaps in the set of feasible N are handled. The scan
    stops once the staffing term c_S N alone reaches the best cost found, and never passes
    ⌈3λ/a*⌉ + 10.
    """
    slope = a_star(cf)
    n_ao = staff_ao(lam, cf, slope)
    n_max = math.ceil(3 * lam / slope) + 10
    logger.info("staffing λ=%g: N^ao=%d, scanning N=2..%d", lam, n_ao, n_max)

    evaluated: list[StaffingResult] = []
    best: StaffingResult | None = None
    for N in range(2, n_max + 1):
        if best is not None and econ.c_S * N >= best.cost:
            break
        result = cost_of(N, lam, cf, econ, selection)
        evaluated.append(result)
        if result.feasible and (best is None or result.cost < best.cost):
            best = result
    else:
        if best is None:
            warnings.warn(f"no admissible staffing for λ={lam} up to N={n_max}", RuntimeWarning, stacklevel=2)
        else:
            warnings.warn(f"staffing scan for λ={lam} reached N_max={n_max}", RuntimeWarning, stacklevel=2)

    if best is not None:
        logger.info("staffing λ=%g: N^opt=%d with cost %.6g after %d evaluation(s)", lam, best.N, best.cost, len(evaluated))
    return StaffingSearch(lam=lam, n_ao=n_ao, n_max=n_max, best=best, evaluated=tuple(evaluated))


def bmr_staffing(lam: float, mu: float, econ: EconomicParams) -> float:
    """Square-root safety staffing λ/μ + y*·√(λ/μ) for servers working at a fixed rate μ."""
    if lam <= 0 or mu <= 0:
        raise QueueDomainError(f"λ and μ must be positive, got λ={lam}, μ={mu}")
    load = lam / mu
    return load + y_star(econ).y_star * math.sqrt(load)
