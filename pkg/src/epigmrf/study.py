"""Simulation-study orchestration: generate, fit, forecast, score, compare.

The study fits three lattice variants to the same replicates:

    (a) daily knots, random-walk coupling across regions,
    (b) daily knots, independent regions,
    (c) bi-weekly knots, independent regions,

then scores death forecasts over the held-out window. Region-level RMSE of
the predictive mean and day-level mean interval scores are averaged across
replicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .config import ScenarioSpec
from .engine import EpidemicModel, McmcSettings, run_chain
from .errors import ConfigError
from .forecast import forecast, score_forecasts
from .gmrf import (
    PrecisionSpec,
    StructureKind,
    TransmissionField,
    build_precision,
    n_knots_for_days,
)
from .mcmc import ParamPrior, ThetaTransform
from .observation import LikelihoodEvaluator
from .simulate import SyntheticDataset, generate_dataset
from .seir import StaticParams

# Fitted-model lattice variants: daily knots with random-walk coupling
# across regions, daily knots with independent regions, and bi-weekly knots
# with independent regions. Coupling weights are shared with the generator.
MODEL_VARIANTS = {
    "a": {"delta_beta": 1.0, "p_m_kind": StructureKind.RW1_TRIDIAGONAL},
    "b": {"delta_beta": 1.0, "p_m_kind": StructureKind.IDENTITY},
    "c": {"delta_beta": 14.0, "p_m_kind": StructureKind.IDENTITY},
}


def reference_priors(truth: StaticParams) -> dict:
    """Weakly informative priors centred on the generator's parameter table."""

    def logit(x):
        return float(np.log(x / (1.0 - x)))

    return {
        "eta": ParamPrior("lognormal", float(np.log(truth.eta)), 0.3),
        "d_I": ParamPrior("lognormal", float(np.log(truth.d_I)), 0.15),
        "k_sens": ParamPrior("logitnormal", logit(truth.k_sens), 0.3),
        "k_spec": ParamPrior("logitnormal", logit(truth.k_spec), 0.3),
        "p": ParamPrior("logitnormal", np.log(truth.p / (1.0 - truth.p)).tolist(), 0.3),
        "z": ParamPrior("lognormal", np.log(truth.z).reshape(-1).tolist(), 0.1),
        "psi": ParamPrior("normal", truth.psi.tolist(), 0.1),
        "ell0": ParamPrior("normal", truth.ell0.tolist(), 0.5),
    }


def variant_precision_spec(variant: str, scenario: ScenarioSpec, train_days: int) -> PrecisionSpec:
    v = MODEL_VARIANTS[variant]
    return PrecisionSpec(
        tau=scenario.tau,
        rho_m=scenario.rho_m,
        rho_time=scenario.rho_time,
        p_m_kind=v["p_m_kind"],
        p_k_kind=StructureKind.RW1_TRIDIAGONAL,
        n_strata=scenario.n_regions,
        n_knots=n_knots_for_days(train_days, v["delta_beta"]),
        delta_beta=v["delta_beta"],
    )


def neutral_field_level(truth: StaticParams, ds: SyntheticDataset) -> np.ndarray:
    """Per-region log-transmission at which the first period grows neutrally."""
    first = ds.schedule.periods[0]
    levels = np.empty(ds.pop.n_regions)
    for m in range(ds.pop.n_regions):
        contacts = first.matrices[m] * truth.z[m, first.slot]
        lam = float(np.max(np.abs(np.linalg.eigvals(contacts))))
        levels[m] = -np.log(max(truth.d_I * lam, 1e-12))
    return levels


@dataclass
class VariantFit:
    """One fitted variant on one replicate, with its forecast scores."""

    variant: str
    seconds_per_kiter: float
    interval_score: np.ndarray  # (regions, horizon_days)
    crps: np.ndarray
    width: np.ndarray
    sq_error: np.ndarray
    rmse: np.ndarray  # (regions,)
    acceptance: dict


def fit_and_score_variant(
    variant: str,
    ds: SyntheticDataset,
    settings: McmcSettings,
    seed,
    alpha: float = 0.05,
    forecast_draw_cap: int | None = None,
) -> VariantFit:
    """Fit one lattice variant to a replicate and score its forecast."""
    scenario = ds.spec
    truth = scenario.true_params()
    train_days = scenario.train_days
    pspec = variant_precision_spec(variant, scenario, train_days)
    precision = build_precision(pspec)
    evaluator = LikelihoodEvaluator(
        ds.train, ds.pop, ds.schedule, ds.delay, scenario.delta, pspec.delta_beta
    )
    transform = ThetaTransform(truth, ("eta", "d_I", "k_sens", "k_spec", "p", "z", "psi", "ell0"))
    model = EpidemicModel(
        evaluator=evaluator,
        transform=transform,
        priors=reference_priors(truth),
        precision=precision,
    )
    init_field = TransmissionField(
        np.tile(neutral_field_level(truth, ds), (pspec.n_knots, 1))
    )
    result = run_chain(
        model, settings, seed, initial_params=truth, initial_field=init_field
    )
    draws = result.draws
    if forecast_draw_cap is not None and draws.n_draws > forecast_draw_cap:
        stride = draws.n_draws // forecast_draw_cap
        sel = slice(None, None, stride)
        from dataclasses import replace as dc_replace

        draws = dc_replace(
            draws,
            theta=draws.theta[sel],
            field=draws.field[sel],
            g=draws.g[sel],
            tau=draws.tau[sel] if draws.tau is not None else None,
            iterations=draws.iterations[sel],
        )
    rng = np.random.default_rng([seed if isinstance(seed, int) else seed[0], 9090])
    fc = forecast(
        draws,
        transform,
        pspec,
        ds.pop,
        ds.schedule,
        ds.delay,
        scenario.delta,
        train_days,
        scenario.test_days,
        rng,
    )
    report = score_forecasts(fc, ds.test, alpha=alpha)
    return VariantFit(
        variant=variant,
        seconds_per_kiter=1000.0 * result.seconds / settings.iterations,
        interval_score=report.interval_score,
        crps=report.crps,
        width=report.width,
        sq_error=report.sq_error,
        rmse=report.region_rmse(),
        acceptance=result.acceptance,
    )


@dataclass
class StudyResult:
    """Replicate-by-variant score tables for the three-way comparison."""

    scenario: str
    n_replicates: int
    variants: tuple = ("a", "b", "c")
    rmse: dict = dc_field(default_factory=dict)  # variant -> (reps, regions)
    interval_by_day: dict = dc_field(default_factory=dict)  # variant -> (reps, days)
    interval_mean: dict = dc_field(default_factory=dict)  # variant -> (reps,)
    seconds_per_kiter: dict = dc_field(default_factory=dict)  # variant -> (reps,)

    def mean_rmse(self, variant: str) -> np.ndarray:
        return self.rmse[variant].mean(axis=0)

    def mean_interval_by_day(self, variant: str) -> np.ndarray:
        return self.interval_by_day[variant].mean(axis=0)

    def mean_interval(self, variant: str) -> float:
        return float(self.interval_mean[variant].mean())

    def mean_seconds_per_kiter(self, variant: str) -> float:
        return float(self.seconds_per_kiter[variant].mean())


def run_simulation_study(
    scenario: ScenarioSpec,
    n_replicates: int,
    settings: McmcSettings,
    master_seed: int,
    alpha: float = 0.05,
    variants=("a", "b", "c"),
    forecast_draw_cap: int | None = 600,
    progress=None,
) -> StudyResult:
    """Fit every variant to every replicate; replicate r uses seed master+r."""
    out = StudyResult(scenario=scenario.scenario, n_replicates=n_replicates, variants=tuple(variants))
    for v in variants:
        out.rmse[v] = np.zeros((n_replicates, scenario.n_regions))
        out.interval_by_day[v] = np.zeros((n_replicates, scenario.test_days))
        out.interval_mean[v] = np.zeros(n_replicates)
        out.seconds_per_kiter[v] = np.zeros(n_replicates)
    for r in range(n_replicates):
        ds = generate_dataset(scenario, master_seed + r)
        for v in variants:
            fit = fit_and_score_variant(
                v,
                ds,
                settings,
                seed=[master_seed + r, ord(v)],
                alpha=alpha,
                forecast_draw_cap=forecast_draw_cap,
            )
            out.rmse[v][r] = fit.rmse
            out.interval_by_day[v][r] = fit.interval_score.mean(axis=0)
            out.interval_mean[v][r] = fit.interval_score.mean()
            out.seconds_per_kiter[v][r] = fit.seconds_per_kiter
            if progress is not None:
                progress(replicate=r, variant=v, fit=fit)
    return out


def study_summary_rows(result: StudyResult) -> list:
    """Flat rows for the study summary table."""
    rows = []
    for v in result.variants:
        mean_rmse = result.mean_rmse(v)
        for m, value in enumerate(mean_rmse):
            rows.append((v, f"rmse_region{m}", float(value)))
        by_day = result.mean_interval_by_day(v)
        for d, value in enumerate(by_day, start=1):
            rows.append((v, f"interval_score_day{d}", float(value)))
        rows.append((v, "interval_score_mean", result.mean_interval(v)))
        rows.append((v, "seconds_per_kiter", result.mean_seconds_per_kiter(v)))
    return rows
