"""Run configuration: the JSON config document and the small command-line grammars."""

import json
import logging
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from pystratq.core_types import (
    CostFamily,
    CostFunction,
    EconomicParams,
    PoaFamily,
    PolynomialFamily,
    QueueConfigurationError,
    poa_cost,
    polynomial_cost,
)
from pystratq.ctmc_exact import IdleOrderPolicy, RateRouting, RoutingPolicy

logger = logging.getLogger(__name__)


def format_validation_error(error: ValidationError) -> str:
    return "; ".join(f"{e['loc']}: {e['msg']} ({e['type']})" for e in error.errors())


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    cost: CostFamily
    econ: EconomicParams = Field(default_factory=EconomicParams)
    seed: int = 0


class Sweep(BaseModel):
    """``steps`` evenly spaced values from ``start`` to ``stop`` inclusive; one step is a single value."""

    model_config = ConfigDict(frozen=True)

    start: float
    stop: float
    steps: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_range(self) -> "Sweep":
        if self.steps == 1 and self.start != self.stop:
            raise ValueError("a single-step sweep needs start == stop")
        if self.steps >= 2 and self.start == self.stop:
            raise ValueError("sweep range is empty")
        return self

    def values(self) -> list[float]:
        return [float(v) for v in np.linspace(self.start, self.stop, self.steps)]

    def as_ints(self) -> list[int]:
        values = self.values()
        ints = [round(v) for v in values]
        if any(abs(v - i) > 1e-9 for v, i in zip(values, ints, strict=True)):
            raise QueueConfigurationError(f"sweep {self.start}:{self.stop}:{self.steps} does not land on integers")
        return list(dict.fromkeys(ints))


class RunSpec(BaseModel):
    """Everything needed to reproduce one CLI run; written next to the output as JSON."""

    model_config = ConfigDict(frozen=True)

    subcommand: str
    sweeps: dict[str, Sweep] = Field(default_factory=dict)
    cost: str | None = None
    econ: EconomicParams = Field(default_factory=EconomicParams)
    config: str | None = None
    out: str | None = None
    format: Literal["csv", "json"] = "csv"
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    options: dict[str, Any] = Field(default_factory=dict)


def _numbers(text: str, parts: list[str], what: str) -> list[float]:
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise QueueConfigurationError(f"malformed {what} {text!r}: {e}") from e


def cost_from_family(family: PolynomialFamily | PoaFamily) -> CostFunction:
    match family:
        case PolynomialFamily(c_E=c_E, p=p):
            return polynomial_cost(c_E, p)
        case PoaFamily(q=q):
            return poa_cost(q)


def parse_cost_spec(text: str) -> CostFunction:
    """``poly:<c_E>:<p>`` or ``poa:<q>``."""
    head, *rest = text.strip().split(":")
    try:
        match head, rest:
            case "poly", [_, _]:
                c_E, p = _numbers(text, rest, "cost spec")
                return cost_from_family(PolynomialFamily(c_E=c_E, p=p))
            case "poa", [_]:
                (q,) = _numbers(text, rest, "cost spec")
                return cost_from_family(PoaFamily(q=q))
            case _:
                raise QueueConfigurationError(f"cost spec {text!r} must be poly:<c_E>:<p> or poa:<q>")
    except ValidationError as e:
        raise QueueConfigurationError(f"invalid cost spec {text!r}: {format_validation_error(e)}") from e


def parse_econ_spec(text: str) -> EconomicParams:
    """``<c_S>:<w>``."""
    parts = text.strip().split(":")
    if len(parts) != 2:
        raise QueueConfigurationError(f"economic spec {text!r} must be <c_S>:<w>")
    c_S, w = _numbers(text, parts, "economic spec")
    try:
        return EconomicParams(c_S=c_S, w=w)
    except ValidationError as e:
        raise QueueConfigurationError(f"invalid economic spec {text!r}: {format_validation_error(e)}") from e


def parse_sweep(text: str) -> Sweep:
    """``<value>`` or ``<start>:<stop>:<steps>``."""
    parts = text.strip().split(":")
    try:
        match parts:
            case [value]:
                (v,) = _numbers(text, parts, "sweep")
                return Sweep(start=v, stop=v, steps=1)
            case [_, _, steps]:
                start, stop = _numbers(text, parts[:2], "sweep")
                if not steps.isdigit() or int(steps) < 2:
                    raise QueueConfigurationError(f"sweep {text!r} needs an integer step count of at least 2")
                return Sweep(start=start, stop=stop, steps=int(steps))
            case _:
                raise QueueConfigurationError(f"sweep {text!r} must be <value> or <start>:<stop>:<steps>")
    except ValidationError as e:
        raise QueueConfigurationError(f"invalid sweep {text!r}: {format_validation_error(e)}") from e


def parse_rates(text: str) -> tuple[float, ...]:
    rates = tuple(_numbers(text, [p for p in text.split(",") if p.strip()], "rate list"))
    if not rates or any(mu <= 0 for mu in rates):
        raise QueueConfigurationError(f"rate list {text!r} must hold positive numbers")
    return rates


def parse_policy(text: str) -> RoutingPolicy:
    """``random``, ``lisf``, ``sisf``, ``weighted``, ``fsf``, ``ssf`` or ``r=<value>``."""
    name = text.strip().lower()
    if name in ("random", "lisf", "sisf", "weighted"):
        return IdleOrderPolicy(kind=name)
    if name in ("fsf", "ssf"):
        return RateRouting(extreme=name)
    if name.startswith("r="):
        (r,) = _numbers(text, [name[2:]], "policy")
        return RateRouting(r=r)
    raise QueueConfigurationError(f"unknown routing policy {text!r}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise QueueConfigurationError(f"cannot read config {path}: {e}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise QueueConfigurationError(f"config {path} is not valid JSON: {e}") from e
    # a bare cost document is accepted as shorthand for {"cost": ...}
    if isinstance(document, dict) and "family" in document:
        document = {"cost": document}
    try:
        config = RunConfig.model_validate(document)
    except ValidationError as e:
        raise QueueConfigurationError(f"invalid config {path}: {format_validation_error(e)}") from e
    logger.debug("loaded config %s: %s", path, config)
    return config


def run_record(spec: RunSpec, versions: dict[str, str], indent: int | None = 2) -> str:
    document = {"run_spec": spec.model_dump(mode="json"), "versions": versions}
    return json.dumps(document, indent=indent, sort_keys=True)


def dump_run_spec(spec: RunSpec, path: str | Path, versions: dict[str, str]) -> Path:
    path = Path(path)
    path.write_text(run_record(spec, versions) + "\n")
    return path
