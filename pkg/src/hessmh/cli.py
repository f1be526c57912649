"""Command-line entry point: ``hessmh {sweep,rate-study,pushforward-check,map}``.

Exit codes: 0 success, 1 a check or chain failed, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

from hessmh.catalog import CatalogError
from hessmh.experiments import (
    RATE_COLUMNS,
    SWEEP_COLUMNS,
    ExperimentConfig,
    map_report,
    render,
    run_pushforward_check,
    run_rate_study,
    run_sweep,
)
from hessmh.mh_core import ConfigurationError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _floats(text: str) -> list:
    return [float(t) for t in str(text).replace(",", " ").split()]


def _ints(text: str) -> list:
    return [int(t) for t in str(text).replace(",", " ").split()]


def _words(text: str) -> list:
    return str(text).replace(",", " ").split()


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines (keys as the long flags, ``-`` or ``_``; ``#`` comments)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    text = Path(path).read_text()
    parser.read_string("[run]\n" + text)
    return {k.replace("-", "_"): v for k, v in parser["run"].items()}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hessmh", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override its entries")
    common.add_argument("--model", help="catalog model name")
    common.add_argument("--n-grid", help="comma-separated concentration levels")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=["csv", "json"])

    sweep = sub.add_parser("sweep", parents=[common], help="efficiency metrics across n")
    sweep.add_argument("--proposal", help="comma-separated variants")
    sweep.add_argument("--step", help="comma-separated step sizes, one per proposal")
    sweep.add_argument("--steps", type=int, help="post burn-in chain length")
    sweep.add_argument("--burn-in", type=int)
    sweep.add_argument("--seeds", help="comma-separated replica seeds")
    sweep.add_argument("--workers", type=int, default=1)

    sub.add_parser("rate-study", parents=[common], help="distance to the Laplace approximation")

    fuzz = sub.add_parser("pushforward-check", parents=[common], help="finite-chain fuzz suite")
    fuzz.add_argument("--cases", type=int)
    fuzz.add_argument("--seed", type=int)

    mp = sub.add_parser("map", parents=[common], help="print x_n, H_n and C_n")
    mp.add_argument("--n", type=float, help="single concentration level")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in ("model", "n_grid", "proposal", "step", "steps", "burn_in", "seeds", "out",
                "format", "cases", "seed"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = ExperimentConfig()
    try:
        if "model" in values:
            cfg.model = str(values["model"])
        if "n_grid" in values:
            cfg.n_grid = _floats(values["n_grid"])
        if "proposal" in values:
            variants = _words(values["proposal"])
            steps = _floats(values.get("step", "1.0"))
            if len(steps) == 1:
                steps = steps * len(variants)
            if len(steps) != len(variants):
                raise ConfigurationError("--step needs one value or one per proposal")
            cfg.proposals = list(zip(variants, steps))
        elif "step" in values:
            raise ConfigurationError("--step given without --proposal")
        if "steps" in values:
            cfg.steps = int(values["steps"])
        if "burn_in" in values:
            cfg.burn_in = int(values["burn_in"])
        if "seeds" in values:
            cfg.seeds = _ints(values["seeds"])
        if "out" in values:
            cfg.out = str(values["out"])
        if "format" in values:
            cfg.format = str(values["format"])
        if "cases" in values:
            cfg.fuzz_cases = int(values["cases"])
        if "seed" in values:
            cfg.fuzz_seed = int(values["seed"])
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigurationError):
            raise
        raise ConfigurationError(str(err)) from err
    return cfg


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "sweep":
            rows, ok = run_sweep(cfg, workers=args.workers)
            _emit(render(rows, SWEEP_COLUMNS, cfg), cfg.out)
            return EXIT_OK if ok else EXIT_FAILED
        if args.command == "rate-study":
            if getattr(args, "model", None) is None and "model" not in (
                    read_config_file(args.config) if args.config else {}):
                raise ConfigurationError("rate-study needs --model")
            rows = run_rate_study(cfg)
            _emit(render(rows, RATE_COLUMNS, cfg), cfg.out)
            return EXIT_OK
        if args.command == "pushforward-check":
            text, ok = run_pushforward_check(cfg)
            _emit(text, cfg.out)
            return EXIT_OK if ok else EXIT_FAILED
        if args.command == "map":
            n = args.n if args.n is not None else cfg.n_grid[-1]
            _emit(json.dumps(map_report(cfg.model, n), indent=2), cfg.out)
            return EXIT_OK
    except (ConfigurationError, CatalogError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
