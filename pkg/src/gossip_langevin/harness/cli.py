"""Command-line entry point ``gossip-langevin``.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 missing or
malformed data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from gossip_langevin import analysis
from gossip_langevin.errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    GossipLangevinError,
    GridRangeError,
    MissingDataError,
)
from gossip_langevin.harness import experiment as ex
from gossip_langevin.harness.report import report
from gossip_langevin.sampler import SamplerConfig
from gossip_langevin.topology import build_ring, expected_laplacian, read_edge_list

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_DATA = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser, chains_default: int | None, seed_default: int | None = 0) -> None:
    p.add_argument("--seed", type=int, default=seed_default, help="master seed")
    p.add_argument("--ticks", type=int, default=None, help="universal-clock ticks per chain")
    p.add_argument("--chains", type=int, default=chains_default, help="independent Monte Carlo chains")
    p.add_argument("--out", default=None, help="output run directory (default: runs/<command>-seed<seed>)")
    p.add_argument("--graph-file", default=None, help="edge-list file replacing the preset ring")
    p.add_argument("--log-events", action="store_true", help="write every gossip event to events.jsonl")
    p.add_argument("--workers", type=int, default=1, help="worker processes for the chains")


def _graph_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ring", type=int, metavar="N", help="ring of N agents (default 5)")
    g.add_argument("--graph-file", default=None, help="edge-list file")


def _graph_from(args):
    if args.graph_file:
        return read_edge_list(args.graph_file)
    return build_ring(args.ring or 5)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gossip-langevin",
        description="Event-triggered gossip Langevin sampling: experiments and diagnostics.",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-gm", help="tied-means Gaussian mixture on a 5-agent ring")
    _common(p, 1)
    p.add_argument("--paper-scale", action="store_true", help="100000 x n ticks instead of 20000 x n")

    p = sub.add_parser("run-logistic", help="logistic regression on MAGIC, four engines")
    _common(p, 10)
    p.add_argument("--repartition-per-chain", action="store_true", help="draw a fresh data partition per chain")
    p.add_argument("--data", default=None, help="path to magic04.data (default: $GOSSIP_LANGEVIN_DATA/magic04.data)")

    p = sub.add_parser("run-custom", help="run a TOML config or a previous manifest.json")
    p.add_argument("config")
    _common(p, None, seed_default=None)

    p = sub.add_parser("report", help="summary tables and plot CSVs for a run directory")
    p.add_argument("run_dir")

    p = sub.add_parser("check-conditions", help="evaluate the step-size and fusion-weight conditions")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--rho-u", type=float, required=True, help="log-Sobolev constant")
    p.add_argument("--l-bar", type=float, required=True, help="Lipschitz constant of the full gradient")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--lambda-n-minus-1", type=float, default=None, help="override the graph's value")
    _graph_args(p)

    p = sub.add_parser("theory-constants", help="consensus-envelope constants as JSON")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--mu-e", type=float, default=8.0)
    p.add_argument("--delta-e", type=float, default=0.51)
    p.add_argument("--mu-g", type=float, required=True, help="bound on squared local gradient norms")
    p.add_argument("--initial-error", type=float, required=True, help="E ||w_tilde(0)||^2")
    p.add_argument("--d-w", type=int, default=2)
    p.add_argument("--ticks", type=int, nargs="*", default=[], help="also evaluate the envelope at these ticks")
    _graph_args(p)
    return ap


def _summary(res: ex.ExperimentResult) -> str:
    lines = [f"status: {res.status}  wall time: {res.wall_time:.1f}s  out: {res.out_dir}"]
    for engine in res.traces:
        rows = [r for r in res.comm if r["engine"] == engine]
        lines.append(
            f"{engine}: mean %gos {100 * np.mean([r['pct_gos'] for r in rows]):.2f}  "
            f"mean %ET {100 * np.mean([r['pct_et'] for r in rows]):.2f}"
        )
    if res.wasserstein:
        lines.append("sliced W1 per agent: " + " ".join(f"{r['sliced_w1']:.4f}" for r in res.wasserstein))
    for engine in {r["engine"] for r in res.accuracy_final}:
        lines.append(f"{engine}: final accuracy {ex.final_accuracy(res, engine):.4f}")
    return "\n".join(lines)


def _dispatch(args) -> int:
    if args.command in ("run-gm", "run-logistic", "run-custom"):
        out = args.out or f"runs/{args.command}-seed{args.seed or 0}"
        if args.command == "run-gm":
            res = ex.run_gm_preset(
                out, seed=args.seed, ticks=args.ticks, chains=args.chains, paper_scale=args.paper_scale,
                graph_file=args.graph_file, log_events=args.log_events, workers=args.workers,
            )
        elif args.command == "run-logistic":
            kw = {} if args.ticks is None else {"ticks": args.ticks}
            res = ex.run_logistic_preset(
                out, seed=args.seed, chains=args.chains, graph_file=args.graph_file, log_events=args.log_events,
                repartition_per_chain=args.repartition_per_chain, data_path=args.data, workers=args.workers, **kw,
            )
        else:
            res = ex.run_custom(
                args.config, out, seed=args.seed, ticks=args.ticks,
                chains=args.chains, log_events=args.log_events, graph_file=args.graph_file,
            )
        print(_summary(res))
        return EXIT_OK

    if args.command == "report":
        print(report(args.run_dir)["text"], end="")
        return EXIT_OK

    g = _graph_from(args)
    if args.command == "check-conditions":
        lam2 = args.lambda_n_minus_1 or expected_laplacian(g).lambda_n_minus_1
        rep = analysis.check_conditions(args.alpha, args.rho_u, args.l_bar, args.beta, lam2)
        print(json.dumps({**rep.to_dict(), "lambda_n_minus_1": lam2}, indent=2))
        return EXIT_OK

    cfg = SamplerConfig(alpha=args.alpha, beta=args.beta, mu_e=args.mu_e, delta_e=args.delta_e).validate()
    tc = analysis.theory_constants(g, cfg, args.mu_g, args.initial_error, args.d_w)
    out = tc.to_dict()
    if args.ticks:
        out["envelope"] = {str(k): float(v) for k, v in zip(args.ticks, analysis.consensus_envelope(tc, args.ticks))}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MissingDataError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, GridRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GossipLangevinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
