import logging
import warnings

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict
from scipy import optimize

from pystratq.core_types import CostFunction, QueueDomainError, RateArray, SystemConfig
from pystratq.idle_time import tagged_utility
from pystratq.special_functions import erlang_c, mean_wait

logger = logging.getLogger(__name__)

FOC_GRID = 2048
FOC_CLEARANCE = 1e-9
ROOT_MERGE = 1e-8
BEST_RESPONSE_GRID = 10_000
MAX_DOUBLINGS = 200


class VerificationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    passed: bool
    slack: float


class EquilibriumPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu: float
    utility: float
    idle_fraction: float
    mean_wait: float
    foc_residual: float
    verification: VerificationResult

    @property
    def verified(self) -> bool:
        return self.verification.passed


class SolverDiagnostics(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid_size: int
    mu_hi: float
    brackets: int
    max_root_residual: float


class EquilibriumReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    cfg: SystemConfig
    cost: str
    equilibria: tuple[EquilibriumPoint, ...]
    rejected: tuple[EquilibriumPoint, ...]
    diagnostics: SolverDiagnostics

    @property
    def largest(self) -> EquilibriumPoint | None:
        return self.equilibria[-1] if self.equilibria else None

    @property
    def foc_roots(self) -> tuple[float, ...]:
        return tuple(sorted(p.mu for p in self.equilibria + self.rejected))


class BestResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    argmax: float
    utility: float
    grid_step: float


class SufficientConditions(BaseModel):
    model_config = ConfigDict(frozen=True)

    existence: bool
    uniqueness: bool


def foc_lhs(mu: ArrayLike, cfg: SystemConfig) -> RateArray:
    """∂I/∂μ1 at the symmetric point: λ/(N²μ²)·(N - λ/μ + C(N, λ/μ))."""
    mu = np.asarray(mu, dtype=float)
    rho = cfg.lam / mu
    return (cfg.lam / (cfg.N**2 * mu**2) * (cfg.N - rho + np.asarray(erlang_c(cfg.N, rho))))[()]


def foc_residual(mu: float, cfg: SystemConfig, cf: CostFunction) -> float:
    if mu <= cfg.min_rate:
        raise QueueDomainError(f"μ = {mu} must exceed λ/N = {cfg.min_rate}")
    return float(foc_lhs(mu, cfg)) - float(cf.d1(mu))


def symmetric_utility(mu: float, cfg: SystemConfig, cf: CostFunction) -> float:
    return 1.0 - cfg.lam / (cfg.N * mu) - float(cf.value(mu))


def sufficient_conditions(cfg: SystemConfig, cf: CostFunction) -> SufficientConditions:
    m = cfg.min_rate
    return SufficientConditions(
        existence=float(cf.d1(m)) < 1.0 / cfg.lam,
        uniqueness=2 * m * float(cf.d1(m)) + m * m * float(cf.d2(m)) >= 1.0,
    )


def _scan_upper_bound(cfg: SystemConfig, cf: CostFunction) -> float:
    # the FOC left side never exceeds λ(N+1)/(N²μ²)
    mu = 2.0 * cfg.min_rate
    for _ in range(MAX_DOUBLINGS):
        if float(cf.d1(mu)) > cfg.lam * (cfg.N + 1) / (cfg.N**2 * mu**2):
            return mu
        mu *= 2.0
    raise QueueDomainError(f"marginal cost never dominates the first-order condition for {cf.label}")


def _merge(roots: list[float]) -> list[float]:
    merged: list[float] = []
    for r in sorted(roots):
        if merged and r - merged[-1] < ROOT_MERGE * max(1.0, r):
            warnings.warn(f"merging nearly coincident roots {merged[-1]:.12g} and {r:.12g}", RuntimeWarning, stacklevel=3)
            merged[-1] = 0.5 * (merged[-1] + r)
        else:
            merged.append(r)
    return merged


def _scan_roots(cfg: SystemConfig, cf: CostFunction, grid_size: int) -> tuple[list[float], SolverDiagnostics]:
    lo = cfg.min_rate
    hi = _scan_upper_bound(cfg, cf)
    grid = lo + np.geomspace(FOC_CLEARANCE * lo, hi - lo, grid_size)
    residual = np.asarray(foc_lhs(grid, cfg)) - np.asarray(cf.d1(grid))
    signs = np.sign(residual)
    brackets = np.flatnonzero(signs[:-1] != signs[1:])

    def f(mu: float) -> float:
        return float(foc_lhs(mu, cfg)) - float(cf.d1(mu))

    roots: list[float] = []
    for i in brackets:
        a, b = float(grid[i]), float(grid[i + 1])
        if residual[i] == 0.0:
            roots.append(a)
        elif residual[i + 1] == 0.0:
            roots.append(b)
        else:
            roots.append(float(optimize.brentq(f, a, b, xtol=1e-14, rtol=1e-12)))
    roots = _merge(roots)
    worst = max((abs(f(r)) for r in roots), default=0.0)
    logger.debug("FOC scan λ=%g N=%d: %d bracket(s) on (%g, %g], roots %s", cfg.lam, cfg.N, len(brackets), lo, hi, roots)
    return roots, SolverDiagnostics(grid_size=grid_size, mu_hi=hi, brackets=len(brackets), max_root_residual=worst)


def find_foc_roots(cfg: SystemConfig, cf: CostFunction, grid_size: int = FOC_GRID) -> list[float]:
    """Solutions μ > λ/N of the symmetric first-order condition, sorted ascending."""
    return _scan_roots(cfg, cf, grid_size)[0]


def verify_equilibrium(mu_star: float, cfg: SystemConfig, cf: CostFunction) -> VerificationResult:
    """Check that a first-order root beats a deviation down to λ/N.

    The slack equals U(μ*, μ*) - U(λ/N, μ*); the root is an equilibrium exactly when it is
    non-negative.
    """
    if cfg.N == 1:
        raise QueueDomainError("equilibrium verification needs N >= 2; use the M/M/1 utility for a single server")
    if mu_star <= cfg.min_rate:
        raise QueueDomainError(f"μ* = {mu_star} must exceed λ/N = {cfg.min_rate}")
    rho = cfg.lam / mu_star
    spare = 1.0 - rho / cfg.N
    c = float(erlang_c(cfg.N, rho))
    bound = float(cf.value(cfg.min_rate)) + spare / (1.0 + 1.0 / (spare + c / (cfg.N - 1)))
    slack = bound - float(cf.value(mu_star))
    return VerificationResult(passed=slack >= 0.0, slack=slack)


def _point(mu: float, cfg: SystemConfig, cf: CostFunction) -> EquilibriumPoint:
    return EquilibriumPoint(
        mu=mu,
        utility=symmetric_utility(mu, cfg, cf),
        idle_fraction=1.0 - cfg.lam / (cfg.N * mu),
        mean_wait=mean_wait(cfg, mu),
        foc_residual=foc_residual(mu, cfg, cf),
        verification=verify_equilibrium(mu, cfg, cf),
    )


def solve(cfg: SystemConfig, cf: CostFunction, grid_size: int = FOC_GRID) -> EquilibriumReport:
    if cfg.N < 2:
        raise QueueDomainError("symmetric equilibria are solved for N >= 2")
    roots, diagnostics = _scan_roots(cfg, cf, grid_size)
    points = [_point(mu, cfg, cf) for mu in roots]
    verified = tuple(p for p in points if p.verified)
    rejected = tuple(p for p in points if not p.verified)

    if len(verified) == 2 and not verified[1].utility > verified[0].utility:
        warnings.warn(
            f"larger equilibrium {verified[1].mu:.6g} does not dominate {verified[0].mu:.6g} at λ={cfg.lam}, N={cfg.N}",
            RuntimeWarning,
            stacklevel=2,
        )
    logger.info("λ=%g N=%d %s: %d root(s), %d equilibrium(s)", cfg.lam, cfg.N, cf.label, len(points), len(verified))
    return EquilibriumReport(cfg=cfg, cost=cf.label, equilibria=verified, rejected=rejected, diagnostics=diagnostics)


def best_response_scan(
    mu_others: float, cfg: SystemConfig, cf: CostFunction, grid: int = BEST_RESPONSE_GRID
) -> BestResponse:
    """Grid-maximize the tagged server's utility over the strategy space (λ/N, μ_hi]."""
    if mu_others <= cfg.min_rate:
        raise QueueDomainError(f"μ = {mu_others} must exceed λ/N = {cfg.min_rate}")
    lo = cfg.min_rate * (1.0 + FOC_CLEARANCE)
    c_lo = float(cf.value(lo))
    hi = 2.0 * max(mu_others, lo)
    for _ in range(MAX_DOUBLINGS):
        if float(cf.value(hi)) - c_lo > 1.0:
            break
        hi *= 2.0
    rates = np.linspace(lo, hi, grid)
    utility = np.asarray(tagged_utility(rates, mu_others, cfg, cf))
    best = int(np.argmax(utility))
    return BestResponse(argmax=float(rates[best]), utility=float(utility[best]), grid_step=float(rates[1] - rates[0]))
