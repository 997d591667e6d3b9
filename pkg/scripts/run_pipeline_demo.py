#!/usr/bin/env python3
"""End-to-end CLI walkthrough on one synthetic replicate.

Simulates a desk-scale dataset, writes a fit config for the coupled daily
lattice, runs fit / forecast / score / diagnose through the command-line
entry point, and prints the score summary.
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from epigmrf.cli import main as cli_main
from epigmrf.config import (
    DataConfig,
    ForecastSettings,
    McmcConfig,
    ModelConfig,
    PriorConfig,
    RunConfig,
    desk_scenario,
)
from epigmrf.study import reference_priors


def build_config(data_dir: Path, seed: int) -> RunConfig:
    spec = desk_scenario("A")
    truth = spec.true_params()
    priors = {
        name: PriorConfig(p.dist, p.mu, p.sigma)
        for name, p in reference_priors(truth).items()
    }
    return RunConfig(
        model=ModelConfig(
            delta=spec.delta,
            delta_beta=1.0,
            p_m_kind="tridiagonal",
            p_k_kind="tridiagonal",
            rho_m=spec.rho_m,
            rho_time=spec.rho_time,
            tau=spec.tau,
            tau_sampled=False,
            tau_prior_shape=1.0,
            tau_prior_rate=0.01,
            sampled_params=("eta", "d_I", "k_sens", "k_spec", "p", "z", "psi", "ell0"),
            priors=priors,
            theta_init=spec.theta,
        ),
        mcmc=McmcConfig(
            iterations=12000,
            burnin=5000,
            thinning=10,
            chains=2,
            blocks=3,
            seed=seed,
            c_init=0.5,
        ),
        data=DataConfig(
            deaths=str(data_dir / "train/deaths.csv"),
            serology=str(data_dir / "train/serology.csv"),
            populations=str(data_dir / "populations.csv"),
            contacts=str(data_dir / "contacts.csv"),
            delay=str(data_dir / "delay.csv"),
        ),
        forecast=ForecastSettings(horizon_days=10, alpha=0.05),
    )


def main() -> int:
    root = Path("pipeline_demo")
    seed = 4242
    steps = [
        ["simulate", "--profile", "desk", "--scenario", "A", "--seed", str(seed), "--out", str(root / "data")],
    ]
    for argv in steps:
        code = cli_main(argv)
        if code != 0:
            return code
    config = build_config(root / "data", seed)
    cfg_path = root / "fit_config.json"
    cfg_path.write_text(config.to_json())
    for argv in (
        ["fit", "--config", str(cfg_path), "--out", str(root / "fit")],
        ["forecast", "--config", str(cfg_path), "--draws", str(root / "fit"), "--out", str(root / "forecast")],
        [
            "score",
            "--forecasts", str(root / "forecast/forecasts.csv"),
            "--truth", str(root / "data/test/deaths.csv"),
            "--out", str(root / "scores"),
        ],
        ["diagnose", "--draws", str(root / "fit"), "--out", str(root / "diagnostics.csv")],
    ):
        code = cli_main(argv)
        if code != 0:
            return code
    print((root / "scores/scores_by_day.csv").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
