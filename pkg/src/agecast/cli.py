"""Command-line front end: ``agecast <subcommand> --config <file>``.

Each subcommand runs one experiment from a config file and writes CSV or JSON
to ``--out``, else the config's ``output`` field, else a file named after the
config in ``$AGECAST_OUTPUT_DIR``, else stdout.  One summary line per sweep
point goes to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import SWEEP_EXPERIMENTS, ExperimentConfig, load_config
from .errors import AgecastError, ConfigError
from .experiments import run_experiment, selftest

OUTPUT_DIR_ENV = "AGECAST_OUTPUT_DIR"

# subcommand -> experiment it runs (None: take it from the config)
SUBCOMMANDS = {
    "run": None,
    "solve": "Solve",
    "oracle": "Oracle",
    "whittle": "Whittle",
    "simulate": "Simulate",
    "compare": "Compare",
    "curve-ftheta": "CurveFTheta",
    "sweep": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agecast", description="Age-aware content fetching policies.")
    parser.add_argument("--version", action="version", version=f"agecast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML or JSON experiment config")
        p.add_argument("--out", help="output file (default: config 'output', then $%s, then stdout)" % OUTPUT_DIR_ENV)
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")
        p.add_argument("--horizon", type=int, help="override the simulation horizon (slots)")

    helps = {
        "run": "run the experiment named in the config",
        "solve": "optimal average cost and thresholds (JSON)",
        "oracle": "brute-force relative value iteration (JSON)",
        "whittle": "per-user index tables (CSV)",
        "simulate": "simulate one policy (JSON)",
        "compare": "simulate several policies on common random numbers (CSV)",
        "curve-ftheta": "f(theta) over a grid (CSV)",
        "sweep": "run the sweep named in the config (CSV)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        common(p)
        if name == "whittle":
            p.add_argument("--tau-max", type=int, help="tabulate g(tau) for tau = 1..k")
        if name == "simulate":
            p.add_argument("--policy", default="optimal",
                           choices=("optimal", "whittle", "always", "never", "periodic"))
        if name == "oracle":
            p.add_argument("--tau-max", type=int, help="initial truncation level")
        if name == "curve-ftheta":
            p.add_argument("--min", type=float, dest="theta_min")
            p.add_argument("--max", type=float, dest="theta_max")
            p.add_argument("--points", type=int)

    st = sub.add_parser("selftest", help="solver/oracle agreement and sanity batteries")
    st.add_argument("--seed", type=int, default=2024)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.horizon is not None:
        if args.horizon < 1:
            raise ConfigError("horizon must be positive", field="--horizon")
        cfg = replace(cfg, simulation={**cfg.simulation, "horizon": args.horizon})
    if args.command == "oracle" and args.tau_max is not None:
        cfg = replace(cfg, solver={**cfg.solver, "tau_max": args.tau_max})
    if args.command == "curve-ftheta" and any(
        v is not None for v in (args.theta_min, args.theta_max, args.points)
    ):
        import numpy as np

        lo = args.theta_min if args.theta_min is not None else cfg.curve["min"]
        hi = args.theta_max if args.theta_max is not None else cfg.curve["max"]
        n = args.points if args.points is not None else cfg.curve["points"]
        if n < 1 or hi < lo:
            raise ConfigError("need points >= 1 and max >= min", field="--min/--max/--points")
        cfg = replace(cfg, curve={"min": lo, "max": hi, "points": n, "values": list(np.linspace(lo, hi, n))})
    return cfg


def _render(art) -> str:
    if art.kind == "json":
        return json.dumps(art.payload, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(art.header)
    w.writerows(art.rows)
    return buf.getvalue()


def _target(cfg: ExperimentConfig, args, kind: str):
    if args.out:
        return Path(args.out)
    if cfg.output:
        return Path(cfg.output)
    out_dir = os.environ.get(OUTPUT_DIR_ENV)
    if out_dir:
        stem = Path(cfg.source).stem if cfg.source else "agecast"
        return Path(out_dir) / f"{stem}_{cfg.experiment}.{kind}"
    return None


def _write(artifacts, cfg, args):
    primary = artifacts[0]
    target = _target(cfg, args, primary.kind)
    for art in artifacts:
        text = _render(art)
        if target is None:
            sys.stdout.write(text)
            if art is not artifacts[-1]:
                sys.stdout.write("\n")
            continue
        path = target if not art.suffix else target.with_name(f"{target.stem}.{art.suffix}{target.suffix}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        print(f"wrote {path}", file=sys.stderr)


def _selftest(seed: int) -> int:
    results = selftest(seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return _selftest(args.seed)
    try:
        cfg = load_config(args.config)
        want = SUBCOMMANDS[args.command]
        if args.command == "sweep":
            if cfg.experiment not in SWEEP_EXPERIMENTS:
                raise ConfigError(f"expected one of {SWEEP_EXPERIMENTS}", field="experiment")
        elif want is not None:
            cfg = replace(cfg, experiment=want)
        cfg = _apply_overrides(cfg, args)
        if args.jobs < 1:
            raise ConfigError("must be >= 1", field="--jobs")
        kw = {}
        if cfg.experiment == "Whittle" and getattr(args, "tau_max", None):
            kw["tau_max"] = args.tau_max
        if cfg.experiment == "Simulate":
            kw["policy"] = getattr(args, "policy", "optimal")
        artifacts, lines = run_experiment(cfg, jobs=args.jobs, **kw)
    except ConfigError as exc:
        print(f"agecast: config error: {exc}", file=sys.stderr)
        return 2
    except (AgecastError, ValueError) as exc:
        print(f"agecast: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for line in lines:
        print(line, file=sys.stderr)
    _write(artifacts, cfg, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
