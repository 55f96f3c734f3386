"""Erlang C, standard normal helpers and the square-root staffing constant."""

import logging
import math
import warnings

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict
from scipy import optimize, special, stats

from pystratq.core_types import EconomicParams, QueueDomainError, RateArray, SystemConfig

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
Y_STAR_BRACKET = (1e-6, 10.0)


def custom_format(message, category, filename, lineno, line=None):
    return f"{category.__name__}: {message}\n"


warnings.formatwarning = custom_format


class BmrConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    y_star: float
    alpha: float
    objective: float


def erlang_c(N: int, rho: ArrayLike) -> RateArray:
    """Probability that an arrival waits in an M/M/N queue with offered load rho.

    Runs the Erlang B recurrence B(k) = ρB(k-1) / (k + ρB(k-1)) and converts to Erlang C,
    so large N never overflows. ``rho`` may be a numpy array.
    """
    if N < 1:
        raise QueueDomainError(f"N must be at least 1, got {N}")
    load = np.asarray(rho, dtype=float)
    if np.any(load < 0) or np.any(load >= N):
        raise QueueDomainError(f"offered load must lie in [0, {N}), got {rho}")

    if load.ndim == 0:
        r = float(load)
        b = 1.0
        for k in range(1, N + 1):
            b = r * b / (k + r * b)
        return b / (1.0 - (r / N) * (1.0 - b))

    b = np.ones_like(load)
    for k in range(1, N + 1):
        rb = load * b
        b = rb / (k + rb)
    return b / (1.0 - (load / N) * (1.0 - b))


def normal_pdf_cdf(x: ArrayLike) -> tuple[RateArray, RateArray]:
    x = np.asarray(x, dtype=float)
    pdf = np.exp(-0.5 * x * x - _LOG_SQRT_2PI)
    return pdf[()], special.ndtr(x)[()]


def hazard_rate(x: ArrayLike) -> RateArray:
    """h(x) = φ(x) / (1 - Φ(x)) for the standard normal."""
    x = np.asarray(x, dtype=float)
    return (stats.norm.pdf(x) / stats.norm.sf(x))[()]


def _check_positive(y: ArrayLike, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise QueueDomainError(f"{name} must be strictly positive, got {y}")
    return y


def alpha(y: ArrayLike) -> RateArray:
    """α(y) = (1 + yΦ(y)/φ(y))⁻¹, evaluated in log space so large y underflows cleanly to 0."""
    y = _check_positive(y)
    log_term = np.log(y) + special.log_ndtr(y) + 0.5 * y * y + _LOG_SQRT_2PI
    return special.expit(-log_term)[()]


def alpha_via_hazard(y: ArrayLike) -> RateArray:
    y = _check_positive(y)
    return (1.0 / (1.0 + y / hazard_rate(-y)))[()]


def bmr_objective(y: ArrayLike, econ: EconomicParams) -> RateArray:
    """c_S y + w α(y) / y."""
    y = _check_positive(y)
    return (econ.c_S * y + econ.w * np.asarray(alpha(y)) / y)[()]


def bmr_objective_derivative(y: ArrayLike, econ: EconomicParams) -> RateArray:
    y = _check_positive(y)
    ratio = np.asarray(alpha(y)) / y
    return (econ.c_S - econ.w * ratio * ((2.0 + y * y) / y - ratio))[()]


def y_star(econ: EconomicParams) -> BmrConstants:
    """Safety coefficient minimizing c_S y + w α(y)/y over (0, 10]."""
    lo, hi = Y_STAR_BRACKET
    if not (bmr_objective_derivative(lo, econ) < 0 < bmr_objective_derivative(hi, econ)):
        warnings.warn(f"y* bracket {Y_STAR_BRACKET} does not straddle a minimum for {econ}", RuntimeWarning, stacklevel=2)
    res = optimize.minimize_scalar(
        lambda y: float(bmr_objective(y, econ)),
        bounds=Y_STAR_BRACKET,
        method="bounded",
        options={"xatol": 1e-10, "maxiter": 500},
    )
    y = float(res.x)
    logger.debug("y* = %.12g after %d evaluations", y, res.nfev)
    return BmrConstants(y_star=y, alpha=float(alpha(y)), objective=float(res.fun))


def mean_wait(cfg: SystemConfig, mu: float) -> float:
    """Mean time in queue of a homogeneous M/M/N queue."""
    if cfg.N * mu <= cfg.lam:
        raise QueueDomainError(f"unstable system: N·μ = {cfg.N * mu} must exceed λ = {cfg.lam}")
    rho = cfg.lam / mu
    return (1.0 / cfg.lam) * (rho / (cfg.N - rho)) * float(erlang_c(cfg.N, rho))
