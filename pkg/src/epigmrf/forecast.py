"""Posterior-predictive death forecasts and proper scoring rules.

Each posterior draw extends the fitted field through its Gaussian conditional
on the extended lattice, re-runs the deterministic dynamics over the full
span with the final contact period held, and samples negative-binomial death
counts over the horizon. Scores (interval score, sample CRPS, squared error
of the predictive mean, interval width) are computed on region totals with
central type-7 quantile intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .gmrf import (
    PrecisionSpec,
    TransmissionField,
    build_precision,
    conditional_forecast_distribution,
    n_knots_for_days,
)
from .observation import DelayDistribution, SurveillanceData, convolve_death_mean
from .seir import ContactSchedule, PopulationStructure, simulate


@dataclass(frozen=True)
class ForecastDraws:
    """Sampled death forecasts per posterior draw.

    deaths and death_mean have shape (draws, regions, horizon_days, ages);
    field_future is (draws, new_knots, strata) and may have zero knots when
    the fitted knot grid already covers the horizon.
    """

    deaths: np.ndarray
    death_mean: np.ndarray
    field_future: np.ndarray
    horizon_days: int

    @property
    def n_draws(self) -> int:
        return self.deaths.shape[0]

    def region_totals(self) -> np.ndarray:
        """Deaths summed over ages, (draws, regions, horizon_days)."""
        return self.deaths.sum(axis=3)


def _negbin_sample(mu: np.ndarray, eta: float, rng) -> np.ndarray:
    out = np.zeros(mu.shape, dtype=np.int64)
    positive = mu > 0.0
    if np.any(positive):
        r = mu[positive] / eta
        out[positive] = rng.negative_binomial(r, 1.0 / (1.0 + eta))
    return out


def forecast(
    draws,
    transform,
    spec: PrecisionSpec,
    pop: PopulationStructure,
    schedule: ContactSchedule,
    delay: DelayDistribution,
    delta: float,
    train_days: int,
    horizon_days: int,
    rng,
) -> ForecastDraws:
    """Posterior-predictive forecast over ``horizon_days`` past the fit.

    ``draws`` is a DrawsStore; ``transform`` rebuilds static parameters from
    its constrained rows. The future block is sampled from the lattice
    conditional given the fitted knots only; no observed data enters here.
    """
    if horizon_days < 0:
        raise ConfigError("horizon must be nonnegative")
    m = pop.n_regions
    a = pop.n_ages
    n_draws = draws.n_draws
    total_knots = n_knots_for_days(train_days + horizon_days, spec.delta_beta)
    new_knots = total_knots - spec.n_knots
    if new_knots < 0:
        raise ConfigError("fitted knot grid is longer than the forecast horizon")
    if horizon_days == 0:
        return ForecastDraws(
            deaths=np.zeros((n_draws, m, 0, a), dtype=np.int64),
            death_mean=np.zeros((n_draws, m, 0, a)),
            field_future=np.zeros((n_draws, 0, m)),
            horizon_days=0,
        )
    spd = round(1.0 / delta)
    n_steps = (train_days + horizon_days) * spd
    deaths = np.zeros((n_draws, m, horizon_days, a), dtype=np.int64)
    means = np.zeros((n_draws, m, horizon_days, a))
    future = np.zeros((n_draws, new_knots, m))
    prec_unit_ext = None
    if new_knots > 0:
        # tau only rescales the precision; build the structure once
        prec_unit_ext = build_precision(replace(spec, tau=1.0, n_knots=total_knots))
    for s in range(n_draws):
        params = transform.params_from_constrained(draws.theta[s])
        tau_s = float(draws.tau[s]) if draws.tau is not None else spec.tau
        fitted = TransmissionField.from_flat(draws.field[s], spec.n_knots, spec.n_strata)
        if new_knots > 0:
            prec_ext = prec_unit_ext.with_tau(tau_s)
            conditional = conditional_forecast_distribution(prec_ext, fitted)
            fut_block = conditional.sample(rng)
            future[s] = fut_block
            values = np.vstack([fitted.values, fut_block])
        else:
            values = fitted.values
        field_ext = TransmissionField(values)
        traj = simulate(params, field_ext, schedule, pop, n_steps, delta, spec.delta_beta)
        mu = convolve_death_mean(traj.daily_new_infections(), delay, params.p)
        mu_fc = mu[:, train_days:, :]
        means[s] = mu_fc
        deaths[s] = _negbin_sample(mu_fc, params.eta, rng)
    return ForecastDraws(
        deaths=deaths, death_mean=means, field_future=future, horizon_days=horizon_days
    )


def interval_score(lower: float, upper: float, y: float, alpha: float) -> float:
    """Gneiting-Raftery interval score for a central (1 - alpha) interval."""
    if lower > upper:
        raise ValueError("interval bounds are crossed")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    score = upper - lower
    if y < lower:
        score += (2.0 / alpha) * (lower - y)
    elif y > upper:
        score += (2.0 / alpha) * (y - upper)
    return score


def crps_sample(draws, y: float) -> float:
    """Sample (energy-form) CRPS: mean|X - y| - 0.5 mean|X - X'|.

    The pair term runs over all ordered pairs including ties; the sorted
    O(n log n) evaluation equals the brute-force double loop.
    """
    x = np.sort(np.asarray(draws, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("no forecast draws")
    if n == 1:
        return float(abs(x[0] - y))
    term1 = float(np.mean(np.abs(x - y)))
    k = np.arange(n)
    pair_sum = 2.0 * float(np.sum(x * (2.0 * k - n + 1.0)))
    return term1 - 0.5 * pair_sum / (n * n)


@dataclass(frozen=True)
class ScoreReport:
    """Per-(region, horizon-day) forecast scores plus the table aggregates."""

    regions: np.ndarray
    days: np.ndarray
    interval_score: np.ndarray
    crps: np.ndarray
    width: np.ndarray
    sq_error: np.ndarray

    def by_day(self) -> dict:
        """Across-region means per horizon day."""
        return {
            "interval_score": self.interval_score.mean(axis=0),
            "crps": self.crps.mean(axis=0),
            "width": self.width.mean(axis=0),
            "sq_error": self.sq_error.mean(axis=0),
        }

    def by_region(self) -> dict:
        """Across-day means per region."""
        return {
            "interval_score": self.interval_score.mean(axis=1),
            "crps": self.crps.mean(axis=1),
            "width": self.width.mean(axis=1),
            "sq_error": self.sq_error.mean(axis=1),
        }

    def region_rmse(self) -> np.ndarray:
        """Root mean squared error of the predictive mean per region."""
        return np.sqrt(self.sq_error.mean(axis=1))


def _score_block(draw_totals: np.ndarray, truth_totals: np.ndarray, alpha: float) -> ScoreReport:
    n_regions, n_days = truth_totals.shape
    lower, upper = np.quantile(
        draw_totals, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0, method="linear"
    )
    is_table = np.empty((n_regions, n_days))
    crps_table = np.empty((n_regions, n_days))
    width_table = upper - lower
    mean_fc = draw_totals.mean(axis=0)
    sq_table = (mean_fc - truth_totals) ** 2
    for m in range(n_regions):
        for d in range(n_days):
            is_table[m, d] = interval_score(
                float(lower[m, d]), float(upper[m, d]), float(truth_totals[m, d]), alpha
            )
            crps_table[m, d] = crps_sample(draw_totals[:, m, d], float(truth_totals[m, d]))
    return ScoreReport(
        regions=np.arange(n_regions),
        days=np.arange(1, n_days + 1),
        interval_score=is_table,
        crps=crps_table,
        width=width_table,
        sq_error=sq_table,
    )


def score_forecasts(
    fc: ForecastDraws, truth: SurveillanceData, alpha: float = 0.05, by_age: bool = False
):
    """Score a forecast against held-out deaths.

    Ages are summed into region totals before scoring (the tables compare
    regional death series); ``by_age=True`` additionally returns one report
    per age group.
    """
    if truth.n_days != fc.horizon_days:
        raise ConfigError("truth does not cover the forecast horizon")
    if truth.n_regions != fc.deaths.shape[1]:
        raise ConfigError("region counts disagree between truth and forecast")
    totals = fc.region_totals().astype(np.float64)
    truth_totals = truth.deaths.sum(axis=2).astype(np.float64)
    report = _score_block(totals, truth_totals, alpha)
    if not by_age:
        return report
    per_age = {}
    for i in range(truth.n_ages):
        per_age[i] = _score_block(
            fc.deaths[:, :, :, i].astype(np.float64),
            truth.deaths[:, :, i].astype(np.float64),
            alpha,
        )
    return report, per_age
