"""Synthetic dataset generation for the simulation scenarios.

A scenario draws the log-transmission field from the lattice prior at
half-day knots, recentres it to a configured overall level (the intrinsic
prior leaves the level free), pushes it through the deterministic dynamics,
and samples negative-binomial deaths plus binomial serosurveys. Everything
needed to rebuild or evaluate the dataset (including the true field and
parameters) goes to disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import gamma as gamma_dist

from .config import ScenarioSpec
from .dataio import (
    metadata_line,
    write_contacts,
    write_deaths,
    write_delay,
    write_populations,
    write_serology,
    write_table,
)
from .gmrf import PrecisionSpec, StructureKind, TransmissionField, n_knots_for_days, sample_field
from .observation import DelayDistribution, SurveillanceData, convolve_death_mean, sero_prob
from .seir import ContactPeriod, ContactSchedule, PopulationStructure, simulate


@dataclass(frozen=True)
class SyntheticDataset:
    """In-memory view of one generated replicate."""

    spec: ScenarioSpec
    field: TransmissionField
    pop: PopulationStructure
    schedule: ContactSchedule
    delay: DelayDistribution
    delay_cdf: np.ndarray
    train: SurveillanceData
    test: SurveillanceData
    death_mean: np.ndarray
    seed: int


def delay_cdf_table(mean: float, sd: float, max_lag: int) -> np.ndarray:
    """Discretised gamma infection-to-death delay evaluated at whole days."""
    shape = (mean / sd) ** 2
    scale = sd * sd / mean
    lags = np.arange(max_lag + 1, dtype=np.float64)
    return gamma_dist.cdf(lags + 0.5, a=shape, scale=scale)


def build_schedule(spec: ScenarioSpec) -> ContactSchedule:
    base = np.asarray(spec.contact_matrix, dtype=np.float64)
    scales = np.asarray(spec.contact_scale_by_region, dtype=np.float64)
    mats = scales[:, None, None] * base[None, :, :]
    steps_per_day = round(1.0 / spec.delta)
    periods = []
    for start_day, slot in zip(spec.period_start_days, spec.period_slots):
        start_step = (start_day - 1) * steps_per_day + 1
        periods.append(ContactPeriod(start_step=start_step, matrices=mats, slot=slot))
    return ContactSchedule(tuple(periods))


def field_precision_spec(spec: ScenarioSpec) -> PrecisionSpec:
    p_m = StructureKind.RW1_TRIDIAGONAL if spec.scenario == "A" else StructureKind.IDENTITY
    return PrecisionSpec(
        tau=spec.tau,
        rho_m=spec.rho_m,
        rho_time=spec.rho_time,
        p_m_kind=p_m,
        p_k_kind=StructureKind.RW1_TRIDIAGONAL,
        n_strata=spec.n_regions,
        n_knots=n_knots_for_days(spec.n_days, spec.delta_beta),
        delta_beta=spec.delta_beta,
    )


# Generation ridge: large enough to pin the free level of the intrinsic
# lattice near zero, small enough to leave the increments untouched.
GENERATION_RIDGE_FRACTION = 1e-2


def generate_dataset(spec: ScenarioSpec, seed: int) -> SyntheticDataset:
    """Generate one replicate; fully determined by (spec, seed)."""
    rng = np.random.default_rng(seed)
    prec_spec = field_precision_spec(spec)
    raw = sample_field(prec_spec, rng, ridge=GENERATION_RIDGE_FRACTION * spec.tau)
    field = TransmissionField(raw.values + spec.field_level)

    params = spec.true_params()
    pop = PopulationStructure(np.asarray(spec.populations, dtype=np.float64))
    schedule = build_schedule(spec)
    steps_per_day = round(1.0 / spec.delta)
    n_steps = spec.n_days * steps_per_day
    traj = simulate(params, field, schedule, pop, n_steps, spec.delta, spec.delta_beta)

    cdf = delay_cdf_table(spec.delay_mean, spec.delay_sd, spec.delay_max_lag)
    delay = DelayDistribution.from_cdf(cdf)
    daily = traj.daily_new_infections()
    mu = convolve_death_mean(daily, delay, params.p)
    deaths = np.zeros(mu.shape, dtype=np.int64)
    positive = mu > 0.0
    r = mu[positive] / params.eta
    deaths[positive] = rng.negative_binomial(r, 1.0 / (1.0 + params.eta))

    sero_n = np.zeros(mu.shape, dtype=np.int64)
    survey_days = np.arange(spec.serology_every, spec.n_days + 1, spec.serology_every)
    sero_n[:, survey_days - 1, :] = spec.serology_samples
    s_day = traj.susceptible_at_day_ends()
    prob = sero_prob(
        np.minimum(s_day, pop.counts[:, None, :]),
        np.broadcast_to(pop.counts[:, None, :], s_day.shape),
        params.k_sens,
        params.k_spec,
    )
    sero_y = np.zeros(mu.shape, dtype=np.int64)
    mask = sero_n > 0
    sero_y[mask] = rng.binomial(sero_n[mask], prob[mask])

    t = spec.train_days
    train = SurveillanceData(deaths[:, :t], sero_y[:, :t], sero_n[:, :t], steps_per_day)
    test = SurveillanceData(deaths[:, t:], sero_y[:, t:], sero_n[:, t:], steps_per_day)
    return SyntheticDataset(
        spec=spec,
        field=field,
        pop=pop,
        schedule=schedule,
        delay=delay,
        delay_cdf=cdf,
        train=train,
        test=test,
        death_mean=mu,
        seed=seed,
    )


def write_dataset(ds: SyntheticDataset, out_dir, config_hash: str = "none") -> Path:
    """Write one replicate: train/test splits, shared inputs and the truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = metadata_line(ds.seed, config_hash, scenario=ds.spec.scenario)
    spd = round(1.0 / ds.spec.delta)
    write_deaths(out / "train" / "deaths.csv", ds.train.deaths, meta)
    write_serology(out / "train" / "serology.csv", ds.train.sero_positive, ds.train.sero_samples, meta)
    write_deaths(out / "test" / "deaths.csv", ds.test.deaths, meta, first_day=ds.spec.train_days + 1)
    write_serology(
        out / "test" / "serology.csv",
        ds.test.sero_positive,
        ds.test.sero_samples,
        meta,
        first_day=ds.spec.train_days + 1,
    )
    write_populations(out / "populations.csv", ds.pop, meta)
    write_contacts(out / "contacts.csv", ds.schedule, spd, meta)
    write_delay(out / "delay.csv", ds.delay_cdf, meta)
    rows = [
        (k, m, ds.field.values[k, m])
        for m in range(ds.field.n_strata)
        for k in range(ds.field.n_knots)
    ]
    write_table(out / "truth_field.csv", ["knot", "region", "value"], rows, meta)
    (out / "truth_params.json").write_text(ds.spec.to_json() + "\n")
    return out
