import logging
import warnings
from collections.abc import Iterable

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict
from scipy import optimize

from pystratq.core_types import CostFunction, EconomicParams, QueueDomainError, RateArray, poa_cost
from pystratq.special_functions import bmr_objective, bmr_objective_derivative, y_star

logger = logging.getLogger(__name__)

MU_BRACKET = (1e-6, 50.0)


class PoaMinimum(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta_star: float
    f_poa: float
    mu_star: float


class PoaCurve(BaseModel):
    """γ and f_PoA along the curve β = √μ c'(μ), with the minimizer of the limiting strategic cost."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mu: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    f_poa: np.ndarray
    minimum: PoaMinimum
    y_star: float


class PoaTableRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    q: float
    beta_star: float
    f_poa: float
    mu_star: float


def gamma(beta: ArrayLike, econ: EconomicParams) -> RateArray:
    """γ(β) = c_S β + w α(β)/β."""
    if np.any(np.asarray(beta) <= 0):
        raise QueueDomainError(f"β must be positive, got {beta}")
    return bmr_objective(beta, econ)


def gamma_prime(beta: ArrayLike, econ: EconomicParams) -> RateArray:
    if np.any(np.asarray(beta) <= 0):
        raise QueueDomainError(f"β must be positive, got {beta}")
    return bmr_objective_derivative(beta, econ)


def beta_of_mu(mu: ArrayLike, cf: CostFunction) -> RateArray:
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise QueueDomainError(f"μ must be positive, got {mu}")
    return (np.sqrt(mu) * np.asarray(cf.d1(mu)))[()]


def mu_of_beta(beta: float, q: float) -> float:
    """Inverse of β = μ^(q - 1/2) for c(μ) = μ^q/q."""
    return beta ** (1.0 / (q - 0.5))


def f_poa(beta: ArrayLike, econ: EconomicParams) -> RateArray:
    return (np.asarray(gamma(beta, econ)) / y_star(econ).objective)[()]


def limiting_strategic_cost(mu: ArrayLike, cf: CostFunction, econ: EconomicParams) -> RateArray:
    """Normalized limiting cost γ(β(μ))/√μ of servers settling at rate μ."""
    beta = beta_of_mu(mu, cf)
    return (np.asarray(gamma(beta, econ)) / np.sqrt(mu))[()]


def foc_c2_residual(beta: float, q: float, econ: EconomicParams) -> float:
    """γ'(β) - γ(β)/(β(2q - 1)); zero at the minimizer of the limiting cost for c(μ) = μ^q/q."""
    return float(gamma_prime(beta, econ)) - float(gamma(beta, econ)) / (beta * (2 * q - 1))


def min_poa(cf: CostFunction, econ: EconomicParams) -> PoaMinimum:
    res = optimize.minimize_scalar(
        lambda mu: float(limiting_strategic_cost(mu, cf, econ)),
        bounds=MU_BRACKET,
        method="bounded",
        options={"xatol": 1e-10, "maxiter": 1000},
    )
    mu = float(res.x)
    beta = float(beta_of_mu(mu, cf))
    result = PoaMinimum(beta_star=beta, f_poa=float(f_poa(beta, econ)), mu_star=mu)
    if beta <= y_star(econ).y_star:
        warnings.warn(f"β* = {beta:.6g} does not exceed y* for {cf.label}", RuntimeWarning, stacklevel=2)
    logger.debug("%s: β*=%.10g μ*=%.10g f_PoA=%.10g", cf.label, beta, mu, result.f_poa)
    return result


def min_poa_for_q(q: float, econ: EconomicParams) -> PoaMinimum:
    if q <= 1:
        raise QueueDomainError(f"q must exceed 1, got {q}")
    return min_poa(poa_cost(q), econ)


def poa_curve(cf: CostFunction, econ: EconomicParams, mu: ArrayLike | None = None) -> PoaCurve:
    mu = np.geomspace(1e-2, 10.0, 200) if mu is None else np.asarray(mu, dtype=float)
    beta = np.asarray(beta_of_mu(mu, cf))
    values = np.asarray(gamma(beta, econ))
    bmr = y_star(econ)
    return PoaCurve(
        mu=mu,
        beta=beta,
        gamma=values,
        f_poa=values / bmr.objective,
        minimum=min_poa(cf, econ),
        y_star=bmr.y_star,
    )


def poa_table(qs: Iterable[float] = (1.001, 1.01, 1.1), econ: EconomicParams | None = None) -> list[PoaTableRow]:
    econ = econ or EconomicParams()
    rows = []
    for q in qs:
        m = min_poa_for_q(q, econ)
        rows.append(PoaTableRow(q=q, beta_star=m.beta_star, f_poa=m.f_poa, mu_star=m.mu_star))
    logger.info("PoA table: %s", ", ".join(f"q={r.q:g} -> {r.f_poa:.4f}" for r in rows))
    return rows
