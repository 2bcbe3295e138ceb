"""Command-line entry point: run / validate / trace-check."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import ConfigError, load_config, run_experiment
from .models import MalformedTrace, group_trace, read_trace


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specstop",
        description="Dynamic draft-stopping policy experiments for speculative decoding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config and write result files")
    run_p.add_argument("config", help="JSON experiment config file")
    run_p.add_argument("--seed", type=int, default=None, help="run a single seed instead")
    run_p.add_argument("--out-dir", default=None, help="override the output directory")

    val_p = sub.add_parser("validate", help="check a config file without running it")
    val_p.add_argument("config", help="JSON experiment config file")

    tc_p = sub.add_parser("trace-check", help="validate a newline-delimited trace file")
    tc_p.add_argument("trace", help="trace file to check")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            if args.seed is not None:
                config = replace(config, seeds=(args.seed,))
            if args.out_dir is not None:
                config = replace(config, out_dir=args.out_dir)
            result = run_experiment(config)
            print(f"wrote {len(result.files)} files to {result.out_dir}")
            for row in result.rows:
                print(
                    f"{row.controller} seed={row.seed} tag={row.tag} "
                    f"m={row.m:.3f} accept_rate={row.accept_rate:.3f} speedup={row.speedup:.3f}"
                )
        elif args.command == "validate":
            config = load_config(args.config)
            print(
                f"ok: {len(config.controllers)} controllers, "
                f"{len(config.seeds)} seeds, model={config.model['kind']}"
            )
        elif args.command == "trace-check":
            records = read_trace(args.trace)
            groups, vocab = group_trace(records)
            steps = ", ".join(f"{pid}:{len(recs)}" for pid, recs in list(groups.items())[:8])
            more = "" if len(groups) <= 8 else f", ... ({len(groups)} prompts)"
            print(f"ok: {len(records)} records, vocab_size>={vocab}, steps per prompt: {steps}{more}")
    except (ConfigError, MalformedTrace, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
