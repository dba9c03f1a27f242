"""Command-line entry point: ``diffnet policy|run|sweep|check``.

Settings are resolved as built-in defaults < ``--config`` JSON < command-line flags.
Exit codes: 0 success, 1 check failure, 2 configuration error, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .engine import DivergenceError
from .harness.checks import cmd_check, format_report
from .harness.commands import cmd_policy, cmd_run, cmd_sweep
from .harness.config import ConfigError, ExperimentConfig
from .topology import ConvergenceError, PolicyError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _agents(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("policy", "build a combination policy and report p, lambda2 and the noise objective"),
        ("run", "single diffusion run with per-iteration metrics"),
        ("sweep", "escape-time sweep over K (and policies) with slope fit and plots"),
        ("check", "run the verification suite"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment JSON")
        p.add_argument("--seed", type=int, help="first seed; the seed list keeps its length")
        p.add_argument("--out", help="output directory")
        p.add_argument("--agents", type=_agents, help="K, or a comma-separated list of K values")
        p.add_argument("--mu", type=float, help="base step size")
        p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None,
                       help="divide mu by sum_k p_k^2 sigma_k^2")
        p.add_argument("--policy", help="uniform, mh, or a policy CSV file")
        p.add_argument("--topology", choices=["complete", "ring", "grid", "random", "star"])
        p.add_argument("--workers", type=int, help="processes for independent seeds")
        p.add_argument("--iters", type=int, help="iterations for 'run'")
        if name == "check":
            p.add_argument("--quick", action="store_true", help="smaller Monte-Carlo budgets")
    return parser


def overrides_from(args: argparse.Namespace, base: dict | None = None) -> dict:
    ov: dict = {}
    if args.seed is not None:
        n = len((base or {}).get("seeds", [0])) or 1
        ov["seeds"] = list(range(args.seed, args.seed + n))
    for key in ("out", "agents", "mu", "normalize", "policy", "workers", "iters"):
        val = getattr(args, key)
        if val is not None:
            ov[key] = val
    if args.topology is not None:
        ov["topology"] = {"kind": args.topology}
    return ov


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        base = ExperimentConfig.load(args.config)
        cfg = ExperimentConfig.load(args.config, overrides_from(args, base.raw))
        if args.command == "policy":
            summary = cmd_policy(cfg)
            print(json.dumps(summary, indent=2))
        elif args.command == "run":
            record = cmd_run(cfg)
            print(f"run finished: {len(record.rows)} rows, escape_iter={record.escape_iter}, "
                  f"output in {cfg.out_dir}")
        elif args.command == "sweep":
            result = cmd_sweep(cfg)
            for (name, K), st in result.stats.items():
                print(f"policy={name} K={K} median={st.median:g} iqr={st.iqr:g} censored={int(st.censored.sum())}")
            for name, fit in result.fits.items():
                print(f"policy={name} fit: {fit}")
        elif args.command == "check":
            results = cmd_check(cfg, quick=args.quick)
            print(format_report(results))
            return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK
    except PolicyError as exc:
        print("invalid combination policy:", file=sys.stderr)
        print(exc.report, file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ConvergenceError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
