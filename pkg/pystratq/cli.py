"""Command-line front end: every subcommand writes a table as CSV (or JSON rows)."""

import argparse
import csv
import io
import json
import logging
import sys
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from importlib import metadata
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from pystratq.config import (
    RunSpec,
    Sweep,
    cost_from_family,
    dump_run_spec,
    format_validation_error,
    load_config,
    parse_cost_spec,
    parse_econ_spec,
    parse_policy,
    parse_rates,
    parse_sweep,
    run_record,
)
from pystratq.core_types import CostFunction, EconomicParams, QueueConfigurationError, StrategicQueueError, SystemConfig
from pystratq.ctmc_exact import RoutingPolicy, collapse_check, generator_solve, product_form
from pystratq.equilibrium import solve
from pystratq.poa import poa_curve, poa_table
from pystratq.routing_mm2 import bounds, equilibrium_for_r
from pystratq.simulator import SimConfig, SimEstimate, compare_policies, run, write_replications_csv
from pystratq.staffing import Selection, a_star, bmr_staffing, cost_of, limiting_cost_per_arrival, n_opt_search, staff_ao

logger = logging.getLogger(__name__)

DEFAULT_COST = "poly:1:2"
NA = "NA"
SWEEP_FLAGS = frozenset({"--lambda", "--N", "--r", "--mu", "--q"})

type Row = dict[str, Any]

COLUMNS: dict[str, list[str]] = {
    "equilibrium": ["lam", "N", "foc_roots", "equilibria", "index", "mu", "utility", "idle_fraction", "mean_wait", "slack"],
    "staffing": [
        "lam",
        "a_star",
        "n_ao",
        "n_opt",
        "mu_ao",
        "mu_opt",
        "cost_ao",
        "cost_opt",
        "cost_ao_per_lam",
        "cost_opt_per_lam",
        "limit_per_lam",
        "n_bmr",
    ],
    "routing": ["lam", "r", "r_lower", "mu", "mean_response", "utility"],
    "collapse": ["source", "policy", "server", "idle_fraction", "half_width", "product_form", "max_deviation"],
    "poa-table": ["q", "beta_star", "f_poa", "mu_star"],
    "poa-curve": ["mu", "beta", "gamma", "f_poa"],
    "simulate": [
        "policy",
        "server",
        "idle_fraction",
        "idle_half_width",
        "mean_wait",
        "mean_wait_half_width",
        "mean_queue_length",
        "mean_queue_length_half_width",
        "served",
    ],
}


def _map[T, R](func: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    """Map in submission order, on a process pool when more than one worker is requested."""
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def _equilibrium_rows(point: tuple[float, int], cf: CostFunction) -> list[Row]:
    lam, N = point
    report = solve(SystemConfig(lam=lam, N=N), cf)
    base = {"lam": lam, "N": N, "foc_roots": len(report.foc_roots), "equilibria": len(report.equilibria)}
    if not report.equilibria:
        return [base]
    return [
        base
        | {
            "index": i,
            "mu": p.mu,
            "utility": p.utility,
            "idle_fraction": p.idle_fraction,
            "mean_wait": p.mean_wait,
            "slack": p.verification.slack,
        }
        for i, p in enumerate(report.equilibria)
    ]


def _staffing_row(lam: float, cf: CostFunction, econ: EconomicParams, selection: Selection) -> Row:
    slope = a_star(cf)
    n_ao = staff_ao(lam, cf, slope)
    row: Row = {"lam": lam, "a_star": slope, "n_ao": n_ao, "limit_per_lam": limiting_cost_per_arrival(cf, econ)}
    if n_ao >= 2:
        at_ao = cost_of(n_ao, lam, cf, econ, selection)
        if at_ao.cost is not None:
            row |= {"mu_ao": at_ao.mu, "cost_ao": at_ao.cost, "cost_ao_per_lam": at_ao.cost / lam}
    search = n_opt_search(lam, cf, econ, selection)
    if search.best is not None and search.best.cost is not None and search.best.mu is not None:
        best = search.best
        row |= {
            "n_opt": best.N,
            "mu_opt": best.mu,
            "cost_opt": best.cost,
            "cost_opt_per_lam": best.cost / lam,
            "n_bmr": bmr_staffing(lam, best.mu, econ),
        }
    return row


def _routing_row(r: float, lam: float, cf: CostFunction, r_lower: float) -> Row:
    row: Row = {"lam": lam, "r": r, "r_lower": r_lower}
    eq = equilibrium_for_r(r, lam, cf)
    if eq is not None:
        row |= {"mu": eq.mu, "mean_response": eq.mean_response, "utility": eq.utility}
    return row


def _single(sweep: Sweep, flag: str) -> float:
    values = sweep.values()
    if len(values) != 1:
        raise QueueConfigurationError(f"{flag} takes a single value here, got a sweep of {len(values)}")
    return values[0]


def _format(value: Any) -> str:
    match value:
        case None:
            return NA
        case bool():
            return "true" if value else "false"
        case int():
            return str(value)
        case float():
            return f"{value:.12g}"
        case _:
            return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, float) and not isinstance(value, bool):
        return float(f"{value:.12g}")
    return value


def render(rows: Sequence[Row], columns: Sequence[str], fmt: str) -> str:
    if fmt == "json":
        table = [{c: _json_value(row.get(c)) for c in columns} for row in rows]
        return json.dumps(table, indent=2) + "\n"
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row.get(c)) for c in columns])
    return buffer.getvalue()


def _versions() -> dict[str, str]:
    versions = {}
    for name in ("pystrategicqueues", "numpy", "scipy", "pydantic", "simpy"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--cost", help=f"cost spec poly:<c_E>:<p> or poa:<q> (default {DEFAULT_COST})")
    common.add_argument("--econ", help="economic parameters <c_S>:<w> (default 1:1)")
    common.add_argument("--config", help="JSON config with cost, econ and seed")
    common.add_argument("--out", help="output file; a <out>.json run record is written next to it")
    common.add_argument("--record", help="run record path (default <out>.json, or one JSON line on stderr without --out)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="pystratq", description="Strategic servers in M/M/N queues.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("equilibrium", parents=[common], help="symmetric equilibria over a λ or N sweep")
    p.add_argument("--lambda", dest="lam", required=True, help="<value> or <start>:<stop>:<steps>")
    p.add_argument("--N", required=True, help="<value> or <start>:<stop>:<steps>")

    p = sub.add_parser("staffing", parents=[common], help="N^ao, N^opt and their costs over a λ sweep")
    p.add_argument("--lambda", dest="lam", required=True)
    p.add_argument("--selection", choices=("largest", "lowest"), default="largest")

    p = sub.add_parser("routing", parents=[common], help="M/M/2 r-routing equilibria over an r sweep")
    p.add_argument("--lambda", dest="lam", required=True, help="a single arrival rate")
    p.add_argument("--r", required=True, help="<value> or <start>:<stop>:<steps>")

    p = sub.add_parser("collapse", parents=[common], help="exact and simulated steady states under several policies")
    p.add_argument("--lambda", dest="lam", required=True)
    p.add_argument("--rates", required=True, help="comma-separated service rates")
    p.add_argument("--policies", default="random,lisf,sisf,weighted")
    p.add_argument("--horizon", type=float, help="also simulate each policy for this long")
    p.add_argument("--replications", type=int, default=10)

    p = sub.add_parser("poa", parents=[common], help="price-of-anarchy table or curve")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--table", action="store_true", help="minimum f_PoA for c(μ)=μ^q/q (default)")
    mode.add_argument("--curve", action="store_true", help="γ and f_PoA along β = √μ c'(μ) for --cost")
    p.add_argument("--q", default="1.001,1.01,1.1", help="comma-separated q values for --table")
    p.add_argument("--mu", default="0.01:10:200", help="μ sweep for --curve")

    p = sub.add_parser("simulate", parents=[common], help="discrete-event simulation runs")
    p.add_argument("--lambda", dest="lam", required=True)
    p.add_argument("--rates", required=True)
    p.add_argument("--policy", default="random", help="random, lisf, sisf, weighted, fsf, ssf or r=<value>")
    p.add_argument("--horizon", type=float, default=1e5)
    p.add_argument("--warmup", type=float, default=0.1)
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--raw", help="also write per-replication rows to this CSV")
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _execute(args: argparse.Namespace) -> tuple[RunSpec, str, list[Row]]:
    cost_text, econ, seed = args.cost, None, args.seed
    if args.config:
        loaded = load_config(args.config)
        econ = loaded.econ
        seed = loaded.seed if seed is None else seed
        cf = parse_cost_spec(cost_text) if cost_text else cost_from_family(loaded.cost)
    else:
        cf = parse_cost_spec(cost_text or DEFAULT_COST)
    if args.econ:
        econ = parse_econ_spec(args.econ)
    econ = econ or EconomicParams()
    seed = 0 if seed is None else seed
    if args.workers < 1:
        raise argparse.ArgumentTypeError("--workers must be at least 1")

    sweeps: dict[str, Sweep] = {}
    options: dict[str, Any] = {}
    rows: list[Row]
    table = args.subcommand

    match args.subcommand:
        case "equilibrium":
            sweeps = {"lambda": parse_sweep(args.lam), "N": parse_sweep(args.N)}
            points = [(lam, N) for N in sweeps["N"].as_ints() for lam in sweeps["lambda"].values()]
            rows = [row for chunk in _map(partial(_equilibrium_rows, cf=cf), points, args.workers) for row in chunk]
        case "staffing":
            sweeps = {"lambda": parse_sweep(args.lam)}
            options = {"selection": args.selection}
            func = partial(_staffing_row, cf=cf, econ=econ, selection=args.selection)
            rows = _map(func, sweeps["lambda"].values(), args.workers)
        case "routing":
            sweeps = {"lambda": parse_sweep(args.lam), "r": parse_sweep(args.r)}
            lam = _single(sweeps["lambda"], "--lambda")
            r_lower = bounds(lam, cf).r_lower
            rows = _map(partial(_routing_row, lam=lam, cf=cf, r_lower=r_lower), sweeps["r"].values(), args.workers)
        case "collapse":
            sweeps = {"lambda": parse_sweep(args.lam)}
            lam = _single(sweeps["lambda"], "--lambda")
            rates = parse_rates(args.rates)
            policies = [parse_policy(name) for name in args.policies.split(",")]
            options = {"rates": rates, "policies": [p.name for p in policies], "horizon": args.horizon}
            rows = _collapse_rows(rates, lam, policies, args, seed)
        case "poa":
            if args.curve:
                table = "poa-curve"
                sweeps = {"mu": parse_sweep(args.mu)}
                curve = poa_curve(cf, econ, sweeps["mu"].values())
                rows = [
                    {"mu": float(m), "beta": float(b), "gamma": float(g), "f_poa": float(f)}
                    for m, b, g, f in zip(curve.mu, curve.beta, curve.gamma, curve.f_poa, strict=True)
                ]
            else:
                table = "poa-table"
                qs = [float(q) for q in args.q.split(",")]
                options = {"q": qs}
                rows = [r.model_dump() for r in poa_table(qs, econ)]
        case "simulate":
            sweeps = {"lambda": parse_sweep(args.lam)}
            lam = _single(sweeps["lambda"], "--lambda")
            policy = parse_policy(args.policy)
            cfg = SimConfig(
                lam=lam,
                rates=parse_rates(args.rates),
                policy=policy,
                horizon=args.horizon,
                warmup=args.warmup,
                replications=args.replications,
                seed=seed,
                workers=args.workers,
            )
            options = {"rates": cfg.rates, "policy": policy.name, "horizon": cfg.horizon, "warmup": cfg.warmup}
            options["replications"] = cfg.replications
            estimate = run(cfg)
            if args.raw:
                write_replications_csv(estimate, args.raw)
            rows = _estimate_rows(estimate)
        case _:
            raise StrategicQueueError(f"unknown subcommand {args.subcommand}")

    spec = RunSpec(
        subcommand=args.subcommand,
        sweeps=sweeps,
        cost=cf.label,
        econ=econ,
        config=args.config,
        out=args.out,
        format=args.format,
        seed=seed,
        workers=args.workers,
        options=options,
    )
    logger.info("%s: %d row(s)", args.subcommand, len(rows))
    return spec, table, rows


def _collapse_rows(rates: tuple[float, ...], lam: float, policies: list[RoutingPolicy], args: argparse.Namespace, seed: int) -> list[Row]:
    reference = product_form(rates, lam)
    report = collapse_check(rates, lam, policies)
    rows: list[Row] = []
    for policy in policies:
        exact = generator_solve(rates, lam, policy)
        for server, idle in enumerate(exact.idle_fractions):
            rows.append(
                {
                    "source": "exact",
                    "policy": policy.name,
                    "server": server,
                    "idle_fraction": idle,
                    "product_form": reference.idle_fractions[server],
                    "max_deviation": report.deviations[policy.name],
                }
            )
    if args.horizon:
        base = SimConfig(
            lam=lam, rates=rates, horizon=args.horizon, replications=args.replications, seed=seed, workers=args.workers
        )
        for name, estimate in compare_policies(base, policies).items():
            for server, (idle, hw) in enumerate(zip(estimate.idle_fractions, estimate.idle_half_widths, strict=True)):
                rows.append(
                    {
                        "source": "simulation",
                        "policy": name,
                        "server": server,
                        "idle_fraction": idle,
                        "half_width": hw,
                        "product_form": reference.idle_fractions[server],
                    }
                )
    return rows


def _estimate_rows(estimate: SimEstimate) -> list[Row]:
    shared = {
        "policy": estimate.policy,
        "mean_wait": estimate.mean_wait,
        "mean_wait_half_width": estimate.mean_wait_half_width,
        "mean_queue_length": estimate.mean_queue_length,
        "mean_queue_length_half_width": estimate.mean_queue_length_half_width,
        "served": estimate.served,
    }
    return [
        shared | {"server": i, "idle_fraction": idle, "idle_half_width": hw}
        for i, (idle, hw) in enumerate(zip(estimate.idle_fractions, estimate.idle_half_widths, strict=True))
    ]


def _attach_negative_values(argv: Sequence[str]) -> list[str]:
    # argparse reads "-3:1.5:50" as an option, so glue such values to their flag
    out: list[str] = []
    tokens = list(argv)
    i = 0
    while i < len(tokens):
        token = tokens[i]
        following = tokens[i + 1] if i + 1 < len(tokens) else ""
        if token in SWEEP_FLAGS and len(following) > 1 and following[0] == "-" and following[1] in "0123456789.":
            out.append(f"{token}={following}")
            i += 2
        else:
            out.append(token)
            i += 1
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_attach_negative_values(sys.argv[1:] if argv is None else argv))
    _configure_logging(args.verbose)
    try:
        spec, table, rows = _execute(args)
    except ValidationError as e:
        print(f"error: {format_validation_error(e)}", file=sys.stderr)
        return 2
    except (StrategicQueueError, argparse.ArgumentTypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    text = render(rows, COLUMNS[table], args.format)
    record = Path(args.record) if args.record else None
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        record = record or out.with_name(out.name + ".json")
    else:
        sys.stdout.write(text)
    if record is not None:
        dump_run_spec(spec, record, _versions())
    else:
        sys.stderr.write(f"run record: {run_record(spec, _versions(), indent=None)}\n")
    return 0
