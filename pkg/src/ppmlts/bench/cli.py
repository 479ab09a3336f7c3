"""Command-line entry point: ``ppmlts <subcommand> --config cfg.json [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 when any run row FAILED, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..dp.accountant import DEFAULT_DELTA, compute_epsilon
from ..errors import ConfigError, InvalidConfig
from .config import load_config
from .experiments import run_experiment
from .report import MetricsReport, read_results_csv, render_report

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

# subcommand -> experiments it may run, plus overrides applied to the config
SUBCOMMANDS = {
    "train": ({"baseline", "arch_bench"}, "Train plaintext baselines and the architecture benchmark."),
    "dp-train": ({"dp_sweep"}, "DP-SGD noise-multiplier sweep."),
    "fed-train": ({"fed_ensemble_study"}, "FedAVG runs."),
    "ensemble": ({"fed_ensemble_study"}, "Federated ensembling and voting-scheme sweep."),
    "fuse": ({"dp_fed_fusion"}, "DP + federated ensembling."),
    "eps": ({"eps_study"}, "Privacy estimates without training."),
    "mpc-bench": ({"mpc_runtime"}, "Encrypted vs plaintext runtime on one batch."),
    "mpc-infer": ({"mpc_inference"}, "Encrypted inference fidelity."),
}


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment JSON file")
    p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppmlts", description="Privacy-preserving time-series classification benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _common(p, config_required=name != "eps")
        if name == "eps":
            p.add_argument("--n", type=int, help="dataset size")
            p.add_argument("--batch-size", type=int, default=32)
            p.add_argument("--epochs", type=int, default=100)
            p.add_argument("--noise-multiplier", type=float, default=0.5)
            p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p = sub.add_parser("report", help="Merge results.csv files into report tables.")
    p.add_argument("inputs", nargs="+", help="result directories or results.csv files")
    p.add_argument("--out", help="directory for merged CSVs")
    p.add_argument("--method", action="append", help="only show these methods (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_overrides(cfg, args, command: str):
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out:
        cfg.output_dir = str(Path(args.out).resolve())
    if command in ("fed-train", "ensemble") and cfg.federated_config is not None:
        cfg.federated_config.methods = ["fedavg"] if command == "fed-train" else ["fedens"]
    return cfg


def _cmd_eps_direct(args) -> int:
    try:
        spent = compute_epsilon(args.n, args.batch_size, args.epochs, args.noise_multiplier, args.delta)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"epsilon={spent.epsilon:.6g} delta={spent.delta:g} order={spent.optimal_order} steps={spent.steps} q={spent.sampling_rate:.6g}")
    return EXIT_OK


def _cmd_report(args) -> int:
    report = MetricsReport()
    for item in args.inputs:
        path = Path(item)
        path = path / "results.csv" if path.is_dir() else path
        if not path.exists():
            print(f"error: {path} not found", file=sys.stderr)
            return EXIT_CONFIG
        report.rows += read_results_csv(path)
    print(render_report(report, args.out, args.method), end="")
    return EXIT_FAILED if report.any_failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        return _cmd_report(args)
    if args.command == "eps" and args.config is None:
        if args.n is None:
            print("error: eps needs --config or --n", file=sys.stderr)
            return EXIT_CONFIG
        return _cmd_eps_direct(args)
    allowed = SUBCOMMANDS[args.command][0]
    try:
        cfg = load_config(args.config)
        if cfg.experiment not in allowed:
            raise ConfigError(f"'{args.command}' runs {sorted(allowed)}, but the config asks for {cfg.experiment!r}")
        cfg = _apply_overrides(cfg, args, args.command)
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_experiment(cfg)
    print(render_report(report), end="")
    for row in report.rows:
        if row.failed:
            print(f"FAILED {row.dataset} {row.method} {row.params} seed={row.seed}: {row.error}", file=sys.stderr)
    return EXIT_FAILED if report.any_failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
