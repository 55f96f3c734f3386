"""Exact steady states of heterogeneous M/M/N queues under idle-order routing.

A state is either the ordered tuple of idle servers (longest idle first) or, once every server is
busy, the number of waiting jobs. Servers are numbered from 0.
"""

import itertools
import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from pystratq.core_types import QueueDomainError, StrategicQueueError

logger = logging.getLogger(__name__)

MAX_SERVERS = 8
TAIL_TOLERANCE = 1e-12
COLLAPSE_TOLERANCE = 1e-9

IdleState = tuple[int, ...]


class StateSpaceError(StrategicQueueError):
    """Raised when the ordered state space is too large or its balance equations cannot be solved."""


class IdleOrderPolicy(BaseModel):
    """Routing that looks only at the order in which the idle servers became idle.

    ``overrides`` replaces the built-in distribution for particular idle sets, keyed by the sorted
    set; the value lists the probabilities of positions 1..|S| from longest to shortest idle.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["random", "lisf", "sisf", "weighted"] = "random"
    overrides: dict[tuple[int, ...], tuple[float, ...]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_overrides(self) -> "IdleOrderPolicy":
        for subset, probs in self.overrides.items():
            if len(subset) != len(probs):
                raise ValueError(f"override for {subset} needs {len(subset)} probabilities, got {len(probs)}")
            if any(x < 0 for x in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-12):
                raise ValueError(f"override for {subset} is not a probability distribution: {probs}")
        return self

    @property
    def name(self) -> str:
        return self.kind if not self.overrides else f"{self.kind}+custom"

    def position_weights(self, idle: IdleState) -> np.ndarray:
        k = len(idle)
        key = tuple(sorted(idle))
        if key in self.overrides:
            return np.asarray(self.overrides[key], dtype=float)
        match self.kind:
            case "random":
                return np.full(k, 1.0 / k)
            case "lisf":
                return np.eye(1, k, 0).ravel()
            case "sisf":
                return np.eye(1, k, k - 1).ravel()
            case "weighted":
                w = np.arange(k, 0, -1, dtype=float)
                return w / w.sum()

    def route_probabilities(self, idle: IdleState, rates: np.ndarray) -> np.ndarray:
        return self.position_weights(idle)


class RateRouting(BaseModel):
    """Send a job to idle server i with probability μ_i^r / Σ μ_j^r, or to the fastest or slowest."""

    model_config = ConfigDict(frozen=True)

    r: float | None = None
    extreme: Literal["fsf", "ssf"] | None = None

    @model_validator(mode="after")
    def _one_rule(self) -> "RateRouting":
        if (self.r is None) == (self.extreme is None):
            raise ValueError("give exactly one of r and extreme")
        return self

    @property
    def name(self) -> str:
        return self.extreme if self.extreme is not None else f"r={self.r:g}"

    def route_probabilities(self, idle: IdleState, rates: np.ndarray) -> np.ndarray:
        mu = rates[list(idle)]
        if self.extreme is not None:
            target = mu.max() if self.extreme == "fsf" else mu.min()
            hits = (mu == target).astype(float)
            return hits / hits.sum()
        logw = self.r * np.log(mu)
        w = np.exp(logw - logw.max())
        return w / w.sum()


RoutingPolicy = IdleOrderPolicy | RateRouting

BUILTIN_POLICIES = (
    IdleOrderPolicy(kind="random"),
    IdleOrderPolicy(kind="lisf"),
    IdleOrderPolicy(kind="sisf"),
    IdleOrderPolicy(kind="weighted"),
)


class OrderedStateSpace(BaseModel):
    model_config = ConfigDict(frozen=True)

    N: int
    states: tuple[IdleState, ...]
    index: dict[IdleState, int]
    ratio: float = Field(description="λ/Σμ, the geometric ratio of the queue once all servers are busy")


class SteadyState(BaseModel):
    """Stationary law over ordered idle states plus the all-busy queue."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rates: tuple[float, ...]
    lam: float
    space: OrderedStateSpace
    pi: np.ndarray
    tail_mass: float
    mean_queue_length: float

    @property
    def pi_busy(self) -> float:
        """All servers busy and nobody waiting."""
        return float(self.pi[self.space.index[()]])

    @property
    def total_mass(self) -> float:
        return float(self.pi.sum()) + self.tail_mass

    @property
    def idle_fractions(self) -> tuple[float, ...]:
        return tuple(idle_fraction_of(self, i) for i in range(self.space.N))

    @property
    def mean_wait(self) -> float:
        return self.mean_queue_length / self.lam

    def probability(self, idle: IdleState) -> float:
        return float(self.pi[self.space.index[tuple(idle)]])


class CollapseReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_deviation: float
    deviations: dict[str, float]
    passed: bool


def enumerate_states(N: int) -> list[IdleState]:
    """Every ordered idle tuple, shortest first: Σ_k N!/(N-k)! states."""
    return [s for k in range(N + 1) for s in itertools.permutations(range(N), k)]


def state_space(rates: tuple[float, ...] | list[float], lam: float) -> OrderedStateSpace:
    mu = np.asarray(rates, dtype=float)
    n = mu.size
    if n < 1:
        raise QueueDomainError("at least one server rate is needed")
    if n > MAX_SERVERS:
        raise StateSpaceError(f"ordered state space for N={n} exceeds the N <= {MAX_SERVERS} guard")
    if np.any(mu <= 0):
        raise QueueDomainError(f"service rates must be positive, got {rates}")
    if lam <= 0:
        raise QueueDomainError(f"arrival rate must be positive, got {lam}")
    if mu.sum() <= lam:
        raise QueueDomainError(f"unstable system: Σμ = {mu.sum()} must exceed λ = {lam}")
    states = tuple(enumerate_states(n))
    return OrderedStateSpace(N=n, states=states, index={s: i for i, s in enumerate(states)}, ratio=lam / mu.sum())


def product_form(rates: tuple[float, ...] | list[float], lam: float) -> SteadyState:
    """π_s = π_B ∏_{i ∈ s} μ_i/λ, with a geometric queue π_m = (λ/Σμ)^m π_B."""
    space = state_space(rates, lam)
    mu = np.asarray(rates, dtype=float)
    scaled = mu / lam
    weights = np.array([np.prod(scaled[list(s)]) if s else 1.0 for s in space.states])
    ratio = space.ratio
    pi_b = 1.0 / (weights.sum() + ratio / (1.0 - ratio))
    return SteadyState(
        rates=tuple(float(x) for x in mu),
        lam=lam,
        space=space,
        pi=weights * pi_b,
        tail_mass=pi_b * ratio / (1.0 - ratio),
        mean_queue_length=pi_b * ratio / (1.0 - ratio) ** 2,
    )


def truncation_level(ratio: float) -> int:
    if ratio <= 0.0:
        return 1
    return max(1, math.ceil(math.log(TAIL_TOLERANCE) / math.log(ratio)))


def _generator(space: OrderedStateSpace, rates: np.ndarray, lam: float, policy: RoutingPolicy, levels: int) -> sparse.csr_matrix:
    size = len(space.states) + levels
    everyone = frozenset(range(space.N))
    total = float(rates.sum())
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    def move(src: int, dst: int, rate: float) -> None:
        if rate > 0.0:
            rows.extend((src, src))
            cols.extend((dst, src))
            vals.extend((rate, -rate))

    for i, idle in enumerate(space.states):
        if idle:
            for pos, prob in enumerate(policy.route_probabilities(idle, rates)):
                move(i, space.index[idle[:pos] + idle[pos + 1 :]], lam * float(prob))
        else:
            move(i, len(space.states), lam)
        for busy in everyone.difference(idle):
            move(i, space.index[(*idle, busy)], float(rates[busy]))

    first = len(space.states)
    for m in range(1, levels + 1):
        src = first + m - 1
        move(src, space.index[()] if m == 1 else src - 1, total)
        if m < levels:
            move(src, src + 1, lam)
    return sparse.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()


def generator_solve(rates: tuple[float, ...] | list[float], lam: float, policy: RoutingPolicy) -> SteadyState:
    """Solve the global balance equations with the queue truncated where (λ/Σμ)^K < 1e-12."""
    space = state_space(rates, lam)
    mu = np.asarray(rates, dtype=float)
    levels = truncation_level(space.ratio)
    q = _generator(space, mu, lam, policy, levels)
    size = q.shape[0]

    system = q.T.tolil()
    system[0, :] = np.ones(size)
    rhs = np.zeros(size)
    rhs[0] = 1.0
    x = sparse_linalg.spsolve(system.tocsc(), rhs)
    if not np.all(np.isfinite(x)):
        raise StateSpaceError(f"balance equations are singular for rates={tuple(rates)}, λ={lam}, {policy.name}")

    n_idle = len(space.states)
    queue = x[n_idle:]
    logger.debug("generator solve N=%d %s: %d states, K=%d", space.N, policy.name, size, levels)
    return SteadyState(
        rates=tuple(float(v) for v in mu),
        lam=lam,
        space=space,
        pi=x[:n_idle],
        tail_mass=float(queue.sum()),
        mean_queue_length=float(np.arange(1, levels + 1) @ queue),
    )


def balance_residual(ss: SteadyState, policy: RoutingPolicy) -> float:
    """max |πQ| of ``ss`` under the generator assembled for ``policy``, with the geometric queue filled in."""
    mu = np.asarray(ss.rates)
    levels = truncation_level(ss.space.ratio)
    q = _generator(ss.space, mu, ss.lam, policy, levels)
    queue = ss.pi_busy * ss.space.ratio ** np.arange(1, levels + 1)
    x = np.concatenate([ss.pi, queue])
    return float(np.abs(q.T @ x).max())


def collapse_check(
    rates: tuple[float, ...] | list[float], lam: float, policies: tuple[RoutingPolicy, ...] | list[RoutingPolicy]
) -> CollapseReport:
    """Largest gap between each policy's exact steady state and the product form."""
    reference = product_form(rates, lam)
    deviations: dict[str, float] = {}
    for policy in policies:
        ss = generator_solve(rates, lam, policy)
        deviations[policy.name] = float(np.abs(ss.pi - reference.pi).max())
    worst = max(deviations.values(), default=0.0)
    logger.info("collapse check rates=%s λ=%g: max deviation %.3g", tuple(rates), lam, worst)
    return CollapseReport(max_deviation=worst, deviations=deviations, passed=worst < COLLAPSE_TOLERANCE)


def idle_fraction_of(ss: SteadyState, server: int) -> float:
    if not 0 <= server < ss.space.N:
        raise QueueDomainError(f"server index must lie in [0, {ss.space.N}), got {server}")
    mask = np.fromiter((server in s for s in ss.space.states), dtype=bool, count=len(ss.space.states))
    return float(ss.pi[mask].sum())
