"""Command-line entry point: ``causal-mdp-bench <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import bench

SUBCOMMANDS = {
    "regret-vs-t": "regret-vs-T",
    "regret-vs-lambda": "regret-vs-lambda",
    "lower-bound": "lower-bound-sanity",
    "properties": "properties",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causal-mdp-bench", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="key = value config file")
        s.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        s.add_argument("--out", type=Path, help="CSV output path")
        s.add_argument("--workers", type=int, help="parallel worker processes")
        s.add_argument("--full-scale", action="store_true", help="use the large-scale experiment sizes")
        s.add_argument("--no-walltime", action="store_true", help="write 0 for wall time (byte-stable output)")
    return p


def _config(args) -> bench.ExperimentConfig:
    cfg = bench.ExperimentConfig(kind=SUBCOMMANDS[args.command])
    if args.full_scale:
        cfg = bench.full_scale(cfg)
    if args.config:
        cfg = bench.load_config(args.config, cfg)
    cfg = replace(cfg, kind=SUBCOMMANDS[args.command])
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_path=str(args.out))
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.no_walltime:
        cfg = replace(cfg, record_walltime=False)
    return cfg.validate()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if cfg.kind == "properties":
        report = bench.run_property_suite(cfg.base_seed)
        print(report)
        return 0 if report.passed else 1

    runner = {
        "regret-vs-T": bench.run_regret_vs_T,
        "regret-vs-lambda": bench.run_regret_vs_lambda,
        "lower-bound-sanity": bench.run_lower_bound_sanity,
    }[cfg.kind]
    rows = runner(cfg)
    out = Path(cfg.output_path)
    try:
        bench.write_csv(rows, out)
        summary = bench.summary_to_csv(bench.summarize(rows))
        out.with_name(out.stem + "_summary.csv").write_text(summary)
    except OSError as exc:
        print(exc, file=sys.stderr)
        return 3
    print(summary, end="")
    print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
