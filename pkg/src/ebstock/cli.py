"""Command-line front end: fit, decide, simulate, group-test,
instability-demo, ingest.

Outputs are plain CSV/JSON; every run embeds its resolved configuration and
seed so reruns are byte-identical. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .core import DataError, build_histogram, default_k_max, read_dataset_csv
from .fmodel import (SplineFitError, empirical_marginal, exact_nb_marginal,
                     fit_spline_marginal, generalized_robbins_pmf,
                     marginal_to_json, plugin_posterior_pmf)
from .gmodel import fit_npmle, mixture_posterior_pmf, mixture_to_json
from .grouping import lr_test
from .newsvendor import optimal_stock
from .oracle import GammaPrior, nb_posterior_pmf
from .simulation import (BENCHMARK_COLUMNS, BenchmarkConfig, DESK_PRESET,
                         PAPER_PRESET, run_benchmark)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _json_out(payload: dict, args: argparse.Namespace) -> str:
    # the output path is not semantic config; dropping it keeps runs with
    # the same parameters byte-identical wherever they are written
    payload["config"] = {k: v for k, v in sorted(vars(args).items())
                         if k not in ("func", "out") and not k.startswith("_")}
    payload["version"] = __version__
    return json.dumps(payload, sort_keys=True, indent=2, default=str)


def _rows_to_csv(rows: list[dict], columns) -> str:
    import io
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), restval="",
                            extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".10g")
    return v


def cmd_fit(args: argparse.Namespace) -> int:
    table = read_dataset_csv(args.data)
    hist = build_histogram(table.dataset(args.horizon))
    if args.method == "g":
        mixture, report = fit_npmle(hist, eps=args.eps, max_iter=args.max_iter)
        from .gmodel import mixture_log_likelihood
        payload = json.loads(mixture_to_json(
            mixture, loglik=mixture_log_likelihood(mixture, hist),
            certificate_eps=report.final_certificate))
        payload["certified"] = report.certified
        payload["termination"] = report.termination
        payload["iterations"] = len(report.iterations)
        payload["log_gamma_bound"] = report.log_gamma_bound
    elif args.method == "f-spline":
        knots = (np.asarray([float(v) for v in args.knots.split(",")])
                 if args.knots else None)
        est = fit_spline_marginal(hist, knots=knots)
        from .fmodel import spline_constraint_residuals
        payload = json.loads(marginal_to_json(est))
        payload["constraint_residuals"] = spline_constraint_residuals(est)
    elif args.method == "f-empirical":
        payload = json.loads(marginal_to_json(empirical_marginal(hist)))
    else:
        raise ValueError(f"unknown method {args.method!r}")
    _write(args.out, _json_out(payload, args))
    return EXIT_OK


def cmd_decide(args: argparse.Namespace) -> int:
    table = read_dataset_csv(args.data)
    hist = build_histogram(table.dataset(args.horizon))
    n = len(table.item_ids)
    revenues = table.prices if table.prices is not None else \
        np.full(n, args.revenue)
    unit_costs = table.unit_costs if table.unit_costs is not None else \
        np.full(n, args.unit_cost)
    fixed_costs = table.fixed_costs if table.fixed_costs is not None else \
        np.full(n, args.fixed_cost)

    mean_rate = max(float(table.demands.mean()) / args.horizon, 1.0)
    k_max = args.k_max or default_k_max(int(table.demands.max()), mean_rate)

    pmf_for: dict[int, object] = {}
    skipped: dict[int, str] = {}
    distinct = np.unique(table.demands)
    if args.method == "naive":
        from .core import poisson_demand_pmf
        for x in distinct:
            pmf_for[int(x)] = poisson_demand_pmf(x / args.horizon, k_max)
    elif args.method in ("plugin", "f-full"):
        marginal = (empirical_marginal(hist) if args.marginal == "empirical"
                    else fit_spline_marginal(hist))
        for x in distinct:
            try:
                if args.method == "plugin":
                    pmf_for[int(x)] = plugin_posterior_pmf(marginal, int(x), k_max)
                else:
                    pmf_for[int(x)] = generalized_robbins_pmf(
                        marginal, int(x), k_max).sanitized()
            except ValueError as exc:
                skipped[int(x)] = str(exc)
    elif args.method == "g":
        mixture, _ = fit_npmle(hist, eps=args.eps)
        for x in distinct:
            pmf_for[int(x)] = mixture_posterior_pmf(mixture, int(x),
                                                    args.horizon, k_max)
    else:
        raise ValueError(f"unknown method {args.method!r}")

    rows = []
    for i, item in enumerate(table.item_ids):
        x = int(table.demands[i])
        if x in skipped:
            rows.append({"item_id": item, "demand": x, "quantity": "",
                         "expected_profit": "", "note": skipped[x]})
            continue
        from .core import ItemEconomics
        econ = ItemEconomics(float(revenues[i]), float(unit_costs[i]),
                             float(fixed_costs[i]))
        decision = optimal_stock(pmf_for[x], econ)
        rows.append({"item_id": item, "demand": x,
                     "quantity": decision.quantity,
                     "expected_profit": decision.expected_profit, "note": ""})
    _write(args.out, _rows_to_csv(
        rows, ("item_id", "demand", "quantity", "expected_profit", "note")))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.preset == "desk":
        config = DESK_PRESET
    elif args.preset == "paper":
        config = PAPER_PRESET
    else:
        config = BenchmarkConfig(
            n_values=tuple(int(v) for v in args.n_list.split(",")),
            betas=tuple(float(v) for v in args.beta_list.split(",")),
            fixed_costs=tuple(float(v) for v in args.b_list.split(",")),
            methods=tuple(args.methods.split(",")),
            replications=args.reps,
        )
    if args.seed is not None:
        config = BenchmarkConfig(**{**config.__dict__, "seed": args.seed})
    rows = run_benchmark(config)
    _write(args.out, _rows_to_csv(rows, BENCHMARK_COLUMNS))
    return EXIT_OK


def cmd_group_test(args: argparse.Namespace) -> int:
    t0 = read_dataset_csv(args.data0)
    t1 = read_dataset_csv(args.data1)
    h0 = build_histogram(t0.dataset(args.horizon))
    h1 = build_histogram(t1.dataset(args.horizon))
    result = lr_test(h0, h1, k=args.k, cutoff=args.cutoff, seed=args.seed or 0)
    payload = json.loads(result.to_json())
    _write(args.out, _json_out(payload, args))
    return EXIT_OK


def cmd_instability_demo(args: argparse.Namespace) -> int:
    prior = GammaPrior(args.alpha, args.theta)
    marginal = exact_nb_marginal(prior)
    est = generalized_robbins_pmf(marginal, args.x, args.k_max)
    lines = [f"exact vs generalized-Robbins posterior, "
             f"gamma prior (shape={args.alpha}, scale={args.theta}), X={args.x}",
             f"{'k':>3} {'exact':>12} {'series':>12} {'terms':>6}"]
    for k in range(args.k_max + 1):
        exact = nb_posterior_pmf(prior, args.x, k)
        lines.append(f"{k:>3} {exact:>12.6f} {est.values[k]:>12.6f} "
                     f"{est.terms_used[k]:>6d}")
    _write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    table = read_dataset_csv(args.data)
    hist = build_histogram(table.dataset(args.horizon))
    payload = {
        "items": len(table.item_ids),
        "horizon": args.horizon,
        "histogram": {"values": hist.values.tolist(),
                      "counts": hist.counts.tolist()},
        "has_economics": table.unit_costs is not None,
        "has_future_demand": table.future_demands is not None,
    }
    _write(args.out, _json_out(payload, args))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ebstock",
        description="Empirical-Bayes demand estimation and newsvendor "
                    "stocking for many Poisson items")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a marginal or mixing distribution")
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--method", choices=("g", "f-spline", "f-empirical"),
                   default="g")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--knots", default=None,
                   help="comma-separated spline knots (default: quantiles)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("decide", help="per-item stocking decisions")
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--method", choices=("naive", "plugin", "f-full", "g"),
                   default="g")
    p.add_argument("--marginal", choices=("spline", "empirical"),
                   default="spline")
    p.add_argument("--revenue", type=float, default=1.0)
    p.add_argument("--unit-cost", type=float, default=0.7)
    p.add_argument("--fixed-cost", type=float, default=0.2)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("simulate", help="benchmark sweep")
    p.add_argument("--preset", choices=("desk", "paper"), default=None)
    p.add_argument("--n-list", default="1000")
    p.add_argument("--beta-list", default="2,3")
    p.add_argument("--b-list", default="0.2")
    p.add_argument("--methods", default="naive,plugin,f-full,g")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1,
                   help="accepted for interface stability; results are "
                        "seed-deterministic regardless")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("group-test", help="LR test between two datasets")
    p.add_argument("--data0", required=True)
    p.add_argument("--data1", required=True)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--cutoff", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_group_test)

    p = sub.add_parser("instability-demo",
                       help="exact vs generalized-Robbins posterior table")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--theta", type=float, default=2.0)
    p.add_argument("--x", type=int, default=8)
    p.add_argument("--k-max", type=int, default=15)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_instability_demo)

    p = sub.add_parser("ingest", help="validate and summarise a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SplineFitError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
