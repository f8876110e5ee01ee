"""Command line entry point: ``envyaudit <subcommand> [options]``."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from envyaudit.audit import AuditParams, sample_sizes
from envyaudit.envs import MatrixFormatError
from envyaudit.harness.config import KINDS, ConfigError, config_from_dict, dump_config, load_config
from envyaudit.harness.experiments import run_experiment


def _add_run_options(p: argparse.ArgumentParser, config_required: bool) -> None:
    p.add_argument("--config", "-c", required=config_required, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--output-dir", "-o", help="override the output directory")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--workers", "-j", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--no-plot", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="envyaudit", description="Envy-freeness audits of recommender systems.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the experiment described by a config file")
    _add_run_options(run_p, config_required=True)
    for kind in KINDS:
        p = sub.add_parser(kind.replace("_", "-"), help=f"run a {kind} experiment (defaults if no --config)")
        _add_run_options(p, config_required=False)
        p.set_defaults(kind=kind)

    s = sub.add_parser("sample-sizes", help="print the audit's target-user and arm counts")
    s.add_argument("--delta", type=float, default=0.05)
    s.add_argument("--gamma", type=float, default=0.1)
    s.add_argument("--lambda", dest="lambda_", type=float, default=0.1)
    return parser


def _config(args):
    overrides = {"master_seed": args.seed, "output_dir": args.output_dir, "trials": args.trials}
    kind = getattr(args, "kind", None)
    if args.config:
        config = load_config(args.config, overrides)
        if kind is not None and config.kind != kind:
            raise ConfigError(f"config kind {config.kind!r} does not match subcommand {kind!r}")
        return config
    return config_from_dict({"kind": kind, **{k: v for k, v in overrides.items() if v is not None}})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "sample-sizes":
        try:
            m_tilde, k = sample_sizes(AuditParams(delta=args.delta, gamma=args.gamma, lambda_=args.lambda_))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"target_users={m_tilde} arms={k}")
        return 0
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        config = _config(args)
        start = time.perf_counter()
        result = run_experiment(config, workers=args.workers)
    except (ConfigError, MatrixFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    dump_config(config, Path(config.output_dir) / f"{config.name}_config.yaml")
    files = list(result.files.values())
    if not args.no_plot:
        from envyaudit.harness.plotting import render
        files += render(result)
    print(f"{config.kind} '{config.name}' finished in {time.perf_counter() - start:.1f}s")
    for path in files:
        print(f"  {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
