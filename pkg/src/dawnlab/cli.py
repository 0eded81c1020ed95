"""Command line entry point: ``run``, ``plot`` and ``dump-config``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from dawnlab.config import PROFILES, RunConfig
from dawnlab.errors import ConfigError
from dawnlab.harness import FIGURES, SUITES, ExperimentSuite, build_suite, default_out_dir, plot, run_suite


def _parse_seeds(text: str):
    """``8`` means seeds 0..7; ``3,5,9`` lists them."""
    if "," in text:
        return tuple(int(s) for s in text.split(",") if s)
    return int(text)


def _parse_overrides(pairs) -> dict:
    out: dict = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if "." in key:
            outer, inner = key.split(".", 1)
            out.setdefault(outer, {})[inner] = value
        else:
            out[key] = value
    return out


def _suite_from_args(args) -> ExperimentSuite:
    overrides = _parse_overrides(args.set)
    seeds = _parse_seeds(args.seeds)
    target = Path(args.target)
    if target.suffix == ".json" and target.exists():
        cfg = RunConfig.load(target)
        if overrides:
            cfg = cfg.with_(**overrides)
        out = Path(args.out) if args.out else default_out_dir() / target.stem
        seeds = tuple(range(seeds)) if isinstance(seeds, int) else seeds
        return ExperimentSuite(target.stem, (cfg,), seeds, out, args.suite_seed)
    warmup = overrides.pop("warmup", None)
    suite = build_suite(args.target, args.profile, seeds, args.out, args.suite_seed, **overrides)
    if warmup:
        variants = tuple(v.with_(warmup=warmup) for v in suite.variants)
        suite = ExperimentSuite(suite.name, variants, suite.seeds, suite.out_dir, suite.suite_seed)
    return suite


def cmd_run(args) -> int:
    suite = _suite_from_args(args)
    outcome = run_suite(suite, workers=args.workers)
    print(f"summary: {outcome.summary}")
    for f in outcome.failures:
        print(f"FAILED {f.variant} seed {f.seed_index}: {f.status} ({f.error})", file=sys.stderr)
    return 0 if outcome.ok else 1


def cmd_plot(args) -> int:
    figs = list(FIGURES) if args.fig == "all" else [args.fig]
    for fig in figs:
        print(plot(args.summary, fig, args.out))
    return 0


def cmd_dump_config(args) -> int:
    suite = build_suite(args.suite, args.profile, 1)
    print(json.dumps([v.to_dict() for v in suite.variants], indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dawnlab", description="Residual RL warmup/normalization experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a named suite or a single config.json over seeds")
    r.add_argument("target", help=f"suite name ({', '.join(SUITES)}) or path to a config.json")
    r.add_argument("--seeds", default="8", help="seed count or comma-separated seed indices")
    r.add_argument("--profile", default="desk", choices=sorted(PROFILES))
    r.add_argument("--out", default=None, help="output directory (default: $DAWNLAB_OUT/<suite>)")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--suite-seed", type=int, default=0)
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. total_steps=50000")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="render a figure from summary.csv")
    pl.add_argument("summary")
    pl.add_argument("--fig", required=True, choices=[*FIGURES, "all"])
    pl.add_argument("--out", default=None)
    pl.set_defaults(func=cmd_plot)

    d = sub.add_parser("dump-config", help="print the variant configs of a suite as JSON")
    d.add_argument("suite", choices=SUITES)
    d.add_argument("--profile", default="desk", choices=sorted(PROFILES))
    d.set_defaults(func=cmd_dump_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
