"""Command-line surface.

Subcommands mirror the pipeline stages:

    causal-testbed generate --settings 1-4 --reps 10 --seed 42 --out run/
    causal-testbed describe run/ [--no-oracle]
    causal-testbed estimate run/ --methods ols_adjust,flexible_rs
    causal-testbed evaluate run/
    causal-testbed report run/

Configuration can come from a JSON file (--config); explicit flags win
over the file, and the CAUSAL_TESTBED_SEED environment variable overrides
the file's seed (but not an explicit --seed flag).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .dgp import N_SETTINGS
from .estimators import REGISTRY
from .pipeline import PipelineError, RunConfig, load_run_config, run_describe, \
    run_estimate, run_evaluate, run_generate, run_report

SEED_ENV = "CAUSAL_TESTBED_SEED"


def parse_settings(spec: str) -> tuple[int, ...]:
    """'1,3,9-12' -> (1, 3, 9, 10, 11, 12); 'all' -> 1..77."""
    if spec.strip() == "all":
        return tuple(range(1, N_SETTINGS + 1))
    out: list[int] = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk:
            lo, hi = chunk.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(chunk))
    for s in out:
        if not 1 <= s <= N_SETTINGS:
            raise ValueError(f"setting out of range 1..{N_SETTINGS}: {s}")
    return tuple(out)


def parse_methods(spec: str) -> tuple[str, ...]:
    if spec.strip() == "all":
        return tuple(sorted(REGISTRY)) + ("oracle_catt",)
    names = tuple(m.strip() for m in spec.split(",") if m.strip())
    for m in names:
        if m not in REGISTRY and m != "oracle_catt":
            raise ValueError(
                f"unknown method {m!r}; registered methods: "
                f"{', '.join(sorted(REGISTRY))}, oracle_catt")
    return names


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--preset", choices=["desk", "paper"],
                   help="covariate preset (desk: n=1000 p=20, paper: n=4802 p=58)")
    p.add_argument("--n", type=int, dest="n_override", help="override row count")
    p.add_argument("--settings", help="e.g. '1,3,9-12' or 'all'")
    p.add_argument("--reps", type=int, dest="replications",
                   help="replications per setting")
    p.add_argument("--methods", help="comma-separated method names or 'all'")
    p.add_argument("--out", help="output directory")
    p.add_argument("--bootstrap-b", type=int, dest="bootstrap_b",
                   help="bootstrap resamples per interval")
    p.add_argument("--threads", type=int, help="cell-level worker count")
    p.add_argument("--no-timing", action="store_true",
                   help="write zero wall times (deterministic outputs)")
    p.add_argument("--allow-partial", action="store_true",
                   help="exit 0 even when some estimator cells failed")
    p.add_argument("--max-rounds", type=int, dest="boost_max_rounds",
                   help="boosting round cap")


def build_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        config = dataclasses.replace(config, seed=int(env_seed))
    overrides = {}
    for name in ("seed", "preset", "n_override", "replications", "out",
                 "bootstrap_b", "threads", "boost_max_rounds"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "settings", None):
        overrides["settings"] = parse_settings(args.settings)
    if getattr(args, "methods", None):
        overrides["methods"] = parse_methods(args.methods)
    if getattr(args, "no_timing", False):
        overrides["record_timing"] = False
    if getattr(args, "allow_partial", False):
        overrides["allow_partial"] = True
    return dataclasses.replace(config, **overrides)


def _config_for_dir(args: argparse.Namespace, out_dir: str) -> RunConfig:
    """Sub-commands that operate on an existing run directory start from
    the manifest's stored configuration."""
    manifest = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest):
        with open(manifest) as fh:
            stored = json.load(fh).get("config", {})
        base = RunConfig.from_dict(stored)
    else:
        base = RunConfig()
    ns = argparse.Namespace(**{**vars(args), "config": None})
    merged = build_config(ns)
    keep = {}
    for f in dataclasses.fields(RunConfig):
        explicit = getattr(args, f.name, None)
        if f.name == "settings" and getattr(args, "settings", None):
            keep[f.name] = getattr(merged, f.name)
        elif f.name == "methods" and getattr(args, "methods", None):
            keep[f.name] = getattr(merged, f.name)
        elif f.name == "record_timing" and getattr(args, "no_timing", False):
            keep[f.name] = False
        elif f.name == "allow_partial" and getattr(args, "allow_partial", False):
            keep[f.name] = True
        elif explicit is not None and f.name in ("seed", "preset", "n_override",
                                                 "replications", "bootstrap_b",
                                                 "threads", "boost_max_rounds"):
            keep[f.name] = explicit
    return dataclasses.replace(base, out=out_dir, **keep)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="causal-testbed",
        description="Synthetic causal-inference testing grounds and "
                    "estimator benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write realization directories")
    _add_config_flags(p_gen)

    p_desc = sub.add_parser("describe", help="compute dataset metrics")
    p_desc.add_argument("data_dir")
    p_desc.add_argument("--no-oracle", action="store_true",
                        help="observable metrics only; never reads truth files")
    p_desc.add_argument("--threads", type=int, default=1)
    p_desc.add_argument("--proxy-rounds", type=int, default=600,
                        help="boosting cap for the alignment-proxy fit")

    p_est = sub.add_parser("estimate", help="run estimators over the grid")
    p_est.add_argument("data_dir")
    _add_config_flags(p_est)

    p_eval = sub.add_parser("evaluate", help="summaries, regressions, "
                                             "variance components")
    p_eval.add_argument("data_dir")

    p_rep = sub.add_parser("report", help="ranked plain-text method table")
    p_rep.add_argument("data_dir")

    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            config = build_config(args)
            out = run_generate(config)
            print(f"generated {config.replications} replication(s) x "
                  f"{len(config.settings)} setting(s) in {out}")
        elif args.command == "describe":
            path = run_describe(args.data_dir, oracle=not args.no_oracle,
                                threads=args.threads,
                                boost_cap=args.proxy_rounds)
            print(f"wrote {path}")
        elif args.command == "estimate":
            config = _config_for_dir(args, args.data_dir)
            path = run_estimate(args.data_dir, config)
            print(f"wrote {path}")
        elif args.command == "evaluate":
            outputs = run_evaluate(args.data_dir)
            print("wrote " + ", ".join(str(p) for p in outputs.values()))
        elif args.command == "report":
            text = run_report(args.data_dir)
            print(text, end="")
    except (PipelineError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
