"""Discrete-event simulation of a heterogeneous M/M/N queue with pluggable routing.

Each replication is a simpy environment: one arrival process plus one process per server. An
arriving job is handed to an idle server through that server's inbox, or joins the shared FIFO
queue when every server is busy.
"""

import csv
import logging
import math
from collections import deque
from collections.abc import Callable, Generator, Sequence
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from itertools import repeat
from pathlib import Path

import numpy as np
import simpy
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats

from pystratq.core_types import QueueDomainError
from pystratq.ctmc_exact import IdleOrderPolicy, IdleState, RateRouting, RoutingPolicy

logger = logging.getLogger(__name__)

DRAW_BATCH = 4096
ROUTE_CACHE_SIZE = 4096
CONFIDENCE = 0.95


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lam: float = Field(ge=0)
    rates: tuple[float, ...]
    policy: IdleOrderPolicy | RateRouting = Field(default_factory=IdleOrderPolicy)
    horizon: float = Field(gt=0)
    warmup: float = Field(default=0.1, ge=0, lt=1)
    replications: int = Field(default=10, ge=1)
    seed: int = 0
    workers: int = Field(default=1, ge=1)

    @field_validator("rates")
    @classmethod
    def _positive_rates(cls, rates: tuple[float, ...]) -> tuple[float, ...]:
        if not rates or any(mu <= 0 for mu in rates):
            raise ValueError(f"rates must be a non-empty list of positive numbers, got {rates}")
        return rates


class ReplicationSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    replication: int
    seed: int
    idle_fractions: tuple[float, ...]
    mean_wait: float
    mean_queue_length: float
    arrivals: int
    served: int


class SimEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    policy: str
    idle_fractions: tuple[float, ...]
    idle_half_widths: tuple[float, ...]
    mean_wait: float
    mean_wait_half_width: float
    mean_queue_length: float
    mean_queue_length_half_width: float
    served: int
    replications: tuple[ReplicationSummary, ...]


class _Draws:
    """Buffered draws from one random stream."""

    def __init__(self, sample: Callable[[int], np.ndarray]) -> None:
        self._sample = sample
        self._buffer = sample(DRAW_BATCH)
        self._next = 0

    def __call__(self) -> float:
        if self._next == DRAW_BATCH:
            self._buffer = self._sample(DRAW_BATCH)
            self._next = 0
        value = self._buffer[self._next]
        self._next += 1
        return float(value)


class RouteTable:
    """Cumulative routing distributions, looked up by the current ordered idle list.

    Idle-order policies only see the number of idle servers, plus the sorted set when an override
    exists for it, so their table holds at most N + len(overrides) entries. Rate routing depends on
    the ordered list itself and goes through an LRU cache of ``maxsize`` entries.
    """

    def __init__(self, policy: RoutingPolicy, rates: np.ndarray, maxsize: int = ROUTE_CACHE_SIZE) -> None:
        self._policy = policy
        self._rates = rates
        self._by_order = lru_cache(maxsize=maxsize)(self._build)
        self._by_count: dict[int | IdleState, np.ndarray] = {}

    def _build(self, idle: IdleState) -> np.ndarray:
        return np.cumsum(self._policy.route_probabilities(idle, self._rates))

    def __call__(self, idle: Sequence[int]) -> np.ndarray:
        if not isinstance(self._policy, IdleOrderPolicy):
            return self._by_order(tuple(idle))
        key: int | IdleState = len(idle)
        if self._policy.overrides:
            subset = tuple(sorted(idle))
            if subset in self._policy.overrides:
                key = subset
        table = self._by_count.get(key)
        if table is None:
            table = self._by_count[key] = self._build(tuple(idle))
        return table

    @property
    def size(self) -> int:
        return len(self._by_count) + self._by_order.cache_info().currsize


class _Replication:
    def __init__(self, cfg: SimConfig, index: int) -> None:
        self.cfg = cfg
        self.index = index
        self.seed = cfg.seed + index
        arrival_rng, service_rng, routing_rng = np.random.default_rng(self.seed).spawn(3)
        self._interarrival = _Draws(arrival_rng.standard_exponential)
        self._work = _Draws(service_rng.standard_exponential)
        self._uniform = _Draws(routing_rng.random)

        self.rates = np.asarray(cfg.rates, dtype=float)
        self.start = cfg.warmup * cfg.horizon
        self.routes = RouteTable(cfg.policy, self.rates)

        self.env = simpy.Environment()
        n = self.rates.size
        self.inboxes = [simpy.Store(self.env) for _ in range(n)]
        self.idle = list(range(n))
        self.idle_since = [0.0] * n
        self.idle_time = [0.0] * n
        self.waiting: deque[float] = deque()

        self.last = 0.0
        self.queue_area = 0.0
        self.wait_total = 0.0
        self.waits = self.arrivals_seen = self.served = 0

    def _overlap(self, a: float, b: float) -> float:
        return max(0.0, min(b, self.cfg.horizon) - max(a, self.start))

    def _mark_queue(self) -> None:
        # queue length is piecewise constant; call before every change to ``waiting``
        now = self.env.now
        self.queue_area += len(self.waiting) * self._overlap(self.last, now)
        self.last = now

    def arrivals(self) -> Generator[simpy.Event, None, None]:
        env = self.env
        while True:
            yield env.timeout(self._interarrival() / self.cfg.lam)
            now = env.now
            self.arrivals_seen += now >= self.start
            if not self.idle:
                self._mark_queue()
                self.waiting.append(now)
                continue
            cumulative = self.routes(self.idle)
            pos = min(int(np.searchsorted(cumulative, self._uniform(), side="right")), len(self.idle) - 1)
            chosen = self.idle.pop(pos)
            self.idle_time[chosen] += self._overlap(self.idle_since[chosen], now)
            self.inboxes[chosen].put(now)

    def server(self, i: int) -> Generator[simpy.Event, float, None]:
        env = self.env
        rate = float(self.rates[i])
        while True:
            arrived: float | None = yield self.inboxes[i].get()
            while arrived is not None:
                if env.now >= self.start:
                    self.wait_total += env.now - arrived
                    self.waits += 1
                yield env.timeout(self._work() / rate)
                self.served += env.now >= self.start
                if self.waiting:
                    self._mark_queue()
                    arrived = self.waiting.popleft()
                else:
                    arrived = None
            self.idle.append(i)
            self.idle_since[i] = env.now

    def run(self) -> ReplicationSummary:
        horizon = self.cfg.horizon
        if self.cfg.lam > 0:
            self.env.process(self.arrivals())
        for i in range(self.rates.size):
            self.env.process(self.server(i))
        self.env.run(until=horizon)

        self.queue_area += len(self.waiting) * self._overlap(self.last, horizon)
        for i in self.idle:
            self.idle_time[i] += self._overlap(self.idle_since[i], horizon)

        window = horizon - self.start
        return ReplicationSummary(
            replication=self.index,
            seed=self.seed,
            idle_fractions=tuple(t / window for t in self.idle_time),
            mean_wait=self.wait_total / self.waits if self.waits else 0.0,
            mean_queue_length=self.queue_area / window,
            arrivals=self.arrivals_seen,
            served=self.served,
        )


def _replicate(cfg: SimConfig, index: int) -> ReplicationSummary:
    return _Replication(cfg, index).run()


def _mean_and_half_width(values: Sequence[float]) -> tuple[float, float]:
    data = np.asarray(values, dtype=float)
    if data.size < 2:
        return float(data.mean()), math.inf
    quantile = stats.t.ppf(0.5 + CONFIDENCE / 2, data.size - 1)
    return float(data.mean()), float(quantile * data.std(ddof=1) / math.sqrt(data.size))


def run(cfg: SimConfig) -> SimEstimate:
    """Independent replications with seeds seed, seed+1, ...; results merge in replication order."""
    if sum(cfg.rates) <= cfg.lam:
        raise QueueDomainError(f"unstable system: Σμ = {sum(cfg.rates)} must exceed λ = {cfg.lam}")
    logger.info(
        "simulating λ=%g rates=%s %s: %d replication(s) of T=%g on %d worker(s)",
        cfg.lam,
        cfg.rates,
        cfg.policy.name,
        cfg.replications,
        cfg.horizon,
        cfg.workers,
    )
    indices = range(cfg.replications)
    if cfg.workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.replications)) as pool:
            runs = list(pool.map(_replicate, repeat(cfg), indices))
    else:
        runs = [_replicate(cfg, i) for i in indices]

    n = len(cfg.rates)
    idle = [_mean_and_half_width([r.idle_fractions[i] for r in runs]) for i in range(n)]
    wait, wait_hw = _mean_and_half_width([r.mean_wait for r in runs])
    queue, queue_hw = _mean_and_half_width([r.mean_queue_length for r in runs])
    return SimEstimate(
        policy=cfg.policy.name,
        idle_fractions=tuple(m for m, _ in idle),
        idle_half_widths=tuple(h for _, h in idle),
        mean_wait=wait,
        mean_wait_half_width=wait_hw,
        mean_queue_length=queue,
        mean_queue_length_half_width=queue_hw,
        served=sum(r.served for r in runs),
        replications=tuple(runs),
    )


def compare_policies(base: SimConfig, policies: Sequence[RoutingPolicy]) -> dict[str, SimEstimate]:
    """Run ``base`` under each policy with the same seeds, so arrival and service streams are shared."""
    return {p.name: run(base.model_copy(update={"policy": p})) for p in policies}


def write_replications_csv(estimates: SimEstimate | Sequence[SimEstimate], path: str | Path) -> Path:
    """One row per replication: policy, replication, seed, idle fractions, waits and counts."""
    if isinstance(estimates, SimEstimate):
        estimates = [estimates]
    path = Path(path)
    n = max(len(e.idle_fractions) for e in estimates)
    header = ["policy", "replication", "seed", *(f"idle_{i}" for i in range(n)), "mean_wait", "mean_queue_length"]
    header += ["arrivals", "served"]
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for estimate in estimates:
            for r in estimate.replications:
                row = [estimate.policy, r.replication, r.seed, *(f"{x:.12g}" for x in r.idle_fractions)]
                writer.writerow([*row, f"{r.mean_wait:.12g}", f"{r.mean_queue_length:.12g}", r.arrivals, r.served])
    return path
