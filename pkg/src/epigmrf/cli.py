"""Command-line interface: simulate | fit | forecast | score | diagnose.

Exit codes: 0 success, 1 numerical failure, 2 configuration or I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, scenario_profile
from .errors import ConfigError, DataFormatError, NumericalError
from .pipeline import cmd_diagnose, cmd_fit, cmd_forecast, cmd_score, cmd_simulate


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epigmrf",
        description="Stratified SEIR inference with a GMRF transmission field",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic scenario dataset")
    p_sim.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p_sim.add_argument("--scenario", choices=["A", "B"], default="A")
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--replicates", type=int, default=1)

    p_fit = sub.add_parser("fit", help="run the MCMC sampler on a dataset")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_fit.add_argument("--chains", type=int, default=None, help="override the chain count")
    p_fit.add_argument("--resume", action="store_true", help="resume from chain checkpoints")

    p_fc = sub.add_parser("forecast", help="posterior-predictive forecast from saved draws")
    p_fc.add_argument("--config", required=True)
    p_fc.add_argument("--draws", required=True, help="fit output directory")
    p_fc.add_argument("--out", required=True)
    p_fc.add_argument("--seed", type=int, default=None)

    p_sc = sub.add_parser("score", help="score saved forecasts against held-out deaths")
    p_sc.add_argument("--forecasts", required=True)
    p_sc.add_argument("--truth", required=True, help="held-out deaths csv")
    p_sc.add_argument("--out", required=True)
    p_sc.add_argument("--alpha", type=float, default=0.05)

    p_dg = sub.add_parser("diagnose", help="ESS and split R-hat from saved draws")
    p_dg.add_argument("--draws", required=True, nargs="+", help="fit output directories")
    p_dg.add_argument("--out", required=True)
    return parser


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config)
    mcmc = config.mcmc
    if getattr(args, "seed", None) is not None:
        mcmc = replace(mcmc, seed=args.seed)
    if getattr(args, "chains", None) is not None:
        mcmc = replace(mcmc, chains=args.chains)
    return replace(config, mcmc=mcmc)


def run(args) -> int:
    if args.command == "simulate":
        spec = scenario_profile(args.profile, args.scenario)
        cmd_simulate(spec, args.out, args.seed, args.replicates)
        return 0
    if args.command == "fit":
        config = _load_config(args)
        base_dir = Path(args.config).resolve().parent
        cmd_fit(config, args.out, base_dir=base_dir, resume=args.resume)
        return 0
    if args.command == "forecast":
        config = _load_config(args)
        base_dir = Path(args.config).resolve().parent
        cmd_forecast(config, args.draws, args.out, base_dir=base_dir, seed=args.seed)
        return 0
    if args.command == "score":
        cmd_score(args.forecasts, args.truth, args.out, alpha=args.alpha)
        return 0
    if args.command == "diagnose":
        cmd_diagnose(args.draws, args.out)
        return 0
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (ConfigError, DataFormatError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
