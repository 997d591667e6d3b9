"""Observation models linking trajectories to surveillance data.

Deaths follow a negative binomial around a delay-convolved infection stream,

    mu[m, d, i] = p_i * sum_l f[d - l] * daily_infections[m, l, i],

with mean mu and variance mu * (1 + eta). Serology is binomial with success
probability k_sens * (1 - S/N) + (1 - k_spec) * S/N, evaluated on the
end-of-day susceptible state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, NumericalError
from .gmrf import FIELD_CAP, TransmissionField, step_knot_indices
from .seir import (
    ContactSchedule,
    PopulationStructure,
    StaticParams,
    compartment_exit_fraction,
    initial_state,
    simulate,
)

# Stand-in for log(0) when an impossible count meets a zero mean; keeps
# Metropolis arithmetic finite so the move is simply rejected.
IMPOSSIBLE_LOGPMF = -1e10

_PROB_EPS = 1e-12


@dataclass(frozen=True)
class DelayDistribution:
    """Infection-to-death delay as a pmf over whole-day lags 0..max_lag."""

    pmf: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.pmf, dtype=np.float64)
        if f.ndim != 1 or f.size == 0:
            raise ConfigError("delay pmf must be a nonempty vector")
        if np.any(f < 0.0):
            raise ConfigError("delay pmf entries must be nonnegative")
        if f.sum() > 1.0 + 1e-9:
            raise ConfigError("delay pmf mass cannot exceed one")
        object.__setattr__(self, "pmf", f)

    @classmethod
    def from_cdf(cls, cdf) -> "DelayDistribution":
        """Difference a cumulative distribution sampled at lags 0, 1, 2, ..."""
        cdf = np.asarray(cdf, dtype=np.float64)
        if cdf.ndim != 1 or cdf.size == 0:
            raise ConfigError("delay cdf must be a nonempty vector")
        if np.any(np.diff(cdf) < -1e-12) or cdf[0] < 0.0 or cdf[-1] > 1.0 + 1e-9:
            raise ConfigError("delay cdf must be nondecreasing within [0, 1]")
        pmf = np.empty_like(cdf)
        pmf[0] = cdf[0]
        pmf[1:] = np.diff(cdf)
        return cls(np.maximum(pmf, 0.0))

    @property
    def max_lag(self) -> int:
        return self.pmf.size - 1


@dataclass(frozen=True)
class SurveillanceData:
    """Death counts and serology per (region, day, age).

    sero_samples == 0 marks days without a serosurvey for that cell.
    steps_per_day gives the day-to-ODE-step mapping.
    """

    deaths: np.ndarray
    sero_positive: np.ndarray
    sero_samples: np.ndarray
    steps_per_day: int

    def __post_init__(self):
        d = np.asarray(self.deaths, dtype=np.int64)
        yp = np.asarray(self.sero_positive, dtype=np.int64)
        n = np.asarray(self.sero_samples, dtype=np.int64)
        if d.ndim != 3 or yp.shape != d.shape or n.shape != d.shape:
            raise ConfigError("surveillance arrays must share a (regions, days, ages) shape")
        if np.any(d < 0):
            raise ConfigError("death counts must be nonnegative")
        if np.any(n < 0) or np.any(yp < 0) or np.any(yp > n):
            raise ConfigError("serology needs 0 <= positives <= samples")
        if self.steps_per_day < 1:
            raise ConfigError("steps_per_day must be at least 1")
        object.__setattr__(self, "deaths", d)
        object.__setattr__(self, "sero_positive", yp)
        object.__setattr__(self, "sero_samples", n)

    @property
    def n_regions(self) -> int:
        return self.deaths.shape[0]

    @property
    def n_days(self) -> int:
        return self.deaths.shape[1]

    @property
    def n_ages(self) -> int:
        return self.deaths.shape[2]


@dataclass(frozen=True)
class LogLikelihood:
    """Total log-likelihood with its per-source breakdown."""

    total: float
    deaths: float
    serology: float


def death_mean(traj, delay: DelayDistribution, ifr: np.ndarray) -> np.ndarray:
    """Expected deaths per (region, day, age) from a trajectory."""
    daily = traj.daily_new_infections()
    return convolve_death_mean(daily, delay, ifr)


def convolve_death_mean(daily: np.ndarray, delay: DelayDistribution, ifr: np.ndarray) -> np.ndarray:
    """Delay-convolve daily infections and scale by the per-age fatality ratio."""
    m, days, a = daily.shape
    mu = np.zeros((m, days, a))
    pmf = delay.pmf
    for lag in range(min(pmf.size, days)):
        w = pmf[lag]
        if w == 0.0:
            continue
        mu[:, lag:, :] += w * daily[:, : days - lag, :]
    return mu * np.asarray(ifr, dtype=np.float64)[None, None, :]


def negbin_logpmf(y, mu, eta: float):
    """Negative binomial log-pmf with mean mu and variance mu * (1 + eta).

    Size is mu/eta and success probability 1/(1+eta). A zero mean yields 0
    for y == 0 and the finite IMPOSSIBLE_LOGPMF sentinel otherwise.
    """
    if eta <= 0.0:
        raise ConfigError("dispersion eta must be positive")
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    zero = mu <= 0.0
    safe_mu = np.where(zero, 1.0, mu)
    r = safe_mu / eta
    logp = -np.log1p(eta)
    log1mp = np.log(eta) - np.log1p(eta)
    lp = gammaln(y + r) - gammaln(r) - gammaln(y + 1.0) + r * logp + y * log1mp
    out = np.where(zero, np.where(y == 0.0, 0.0, IMPOSSIBLE_LOGPMF), lp)
    return float(out) if out.ndim == 0 else out


def binom_logpmf(y, n, prob):
    y = np.asarray(y, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    prob = np.asarray(prob, dtype=np.float64)
    out = (
        gammaln(n + 1.0)
        - gammaln(y + 1.0)
        - gammaln(n - y + 1.0)
        + y * np.log(prob)
        + (n - y) * np.log1p(-prob)
    )
    return float(out) if out.ndim == 0 else out


def sero_prob(s, n, k_sens: float, k_spec: float):
    """Probability a sampled serum tests positive given susceptibles s of n."""
    s = np.asarray(s, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if np.any(s < 0.0) or np.any(s > n):
        raise ValueError("susceptible count must lie in [0, N]")
    frac = s / n
    p = k_sens * (1.0 - frac) + (1.0 - k_spec) * frac
    out = np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
    return float(out) if out.ndim == 0 else out


class LikelihoodEvaluator:
    """Hot-path evaluation of g(field; params) against one dataset.

    Precomputes the step/knot/period index maps and all count-only gamma
    terms; repeated calls reuse internal scratch buffers so the per-call
    allocation cost stays flat.
    """

    def __init__(
        self,
        data: SurveillanceData,
        pop: PopulationStructure,
        schedule: ContactSchedule,
        delay: DelayDistribution,
        delta: float,
        delta_beta: float,
    ):
        if pop.n_regions != data.n_regions or pop.n_ages != data.n_ages:
            raise ConfigError("population and surveillance dimensions disagree")
        if schedule.n_regions != pop.n_regions or schedule.n_ages != pop.n_ages:
            raise ConfigError("schedule and population dimensions disagree")
        spd = data.steps_per_day
        if abs(spd * delta - 1.0) > 1e-12:
            raise ConfigError("steps_per_day must equal 1/delta")
        self.data = data
        self.pop = pop
        self.schedule = schedule
        self.delay = delay
        self.delta = float(delta)
        self.delta_beta = float(delta_beta)
        self.n_steps = data.n_days * spd
        self.knot_idx = step_knot_indices(self.n_steps, delta, delta_beta)
        self.n_knots = int(self.knot_idx[-1]) + 1 if self.n_steps else 0
        self.period_idx = schedule.period_index(self.n_steps)
        self._mats, self._slots = schedule.stacked()
        m, a, days = pop.n_regions, pop.n_ages, data.n_days
        self._deaths = data.deaths.astype(np.float64)
        self._lg_deaths = gammaln(self._deaths + 1.0)
        self._sero_mask = data.sero_samples > 0
        ys = data.sero_positive[self._sero_mask].astype(np.float64)
        ns = data.sero_samples[self._sero_mask].astype(np.float64)
        self._sero_y = ys
        self._sero_n = ns
        self._sero_const = gammaln(ns + 1.0) - gammaln(ys + 1.0) - gammaln(ns - ys + 1.0)
        day_ends = (np.arange(1, days + 1)) * spd
        self._sero_cell = np.argwhere(self._sero_mask)
        self._sero_steps = day_ends[self._sero_cell[:, 1]]
        self._s_day = np.empty((m, days, a))
        self._daily = np.empty((m, days, a))
        self._scratch_dnew = np.empty((m, self.n_steps, a))
        # reusable step-loop buffers; g() is the sampler hot path
        self._buf = {name: np.empty((m, a)) for name in ("frac", "force", "new", "e_out", "i_out")}
        self._buf_m31 = np.empty((m, a, 1))

    def _run_dynamics(self, params: StaticParams, field_values: np.ndarray):
        """Fill the daily-infection and day-end susceptible scratch arrays."""
        pop = self.pop.counts
        m, a = pop.shape
        spd = self.data.steps_per_day
        zfac = params.z[:, self._slots].T
        zc = self._mats * zfac[:, :, None, None]
        exit_e = compartment_exit_fraction(self.delta, params.d_L)
        exit_i = compartment_exit_fraction(self.delta, params.d_I)
        ebeta = np.exp(np.minimum(field_values, FIELD_CAP))[self.knot_idx, :, None]
        ebeta *= -self.delta
        s, e, i, _ = initial_state(params, self.pop)
        dnew = self._scratch_dnew
        period_idx = self.period_idx
        frac = self._buf["frac"]
        force = self._buf["force"]
        new = self._buf["new"]
        e_out = self._buf["e_out"]
        i_out = self._buf["i_out"]
        tmp = self._buf_m31
        for k in range(self.n_steps):
            np.divide(i, pop, out=frac)
            np.matmul(zc[period_idx[k]], frac[:, :, None], out=tmp)
            np.multiply(ebeta[k], tmp[:, :, 0], out=force)  # -delta * force of infection
            np.expm1(force, out=force)
            np.multiply(s, force, out=new)
            np.negative(new, out=new)
            np.multiply(e, exit_e, out=e_out)
            np.multiply(i, exit_i, out=i_out)
            s -= new
            e += new
            e -= e_out
            i += e_out
            i -= i_out
            dnew[:, k, :] = new
            if (k + 1) % spd == 0:
                self._s_day[:, (k + 1) // spd - 1, :] = s
        days = self.data.n_days
        self._daily[:] = dnew.reshape(m, days, spd, a).sum(axis=2)

    def _field_values(self, field) -> np.ndarray:
        if isinstance(field, TransmissionField):
            values = field.values
        else:
            flat = np.asarray(field, dtype=np.float64)
            m = self.pop.n_regions
            values = flat.reshape(m, flat.size // m).T
        if values.shape[0] < self.n_knots or values.shape[1] != self.pop.n_regions:
            raise ConfigError("field does not cover the data horizon")
        return values

    def g_breakdown(self, params: StaticParams, field) -> LogLikelihood:
        """Log-likelihood with per-source parts; raises on non-finite cells.

        Parameter points whose dynamics are undefined (seed mass beyond the
        population) raise NumericalError so samplers treat them as rejects.
        """
        values = self._field_values(field)
        try:
            self._run_dynamics(params, values)
        except ConfigError as exc:
            raise NumericalError(f"dynamics rejected the parameter point: {exc}") from exc
        mu = convolve_death_mean(self._daily, self.delay, params.p)
        zero = mu <= 0.0
        safe_mu = np.where(zero, 1.0, mu)
        r = safe_mu / params.eta
        y = self._deaths
        lp = (
            gammaln(y + r)
            - gammaln(r)
            - self._lg_deaths
            - r * np.log1p(params.eta)
            + y * (np.log(params.eta) - np.log1p(params.eta))
        )
        lp = np.where(zero, np.where(y == 0.0, 0.0, IMPOSSIBLE_LOGPMF), lp)
        if not np.all(np.isfinite(lp)):
            idx = np.argwhere(~np.isfinite(lp))[0]
            raise NumericalError(f"non-finite death likelihood at (region, day, age) = {tuple(idx)}")
        death_by_region = lp.sum(axis=(1, 2))
        death_total = float(death_by_region.sum())

        if self._sero_y.size:
            cells = self._sero_cell
            s_vals = self._s_day[cells[:, 0], cells[:, 1], cells[:, 2]]
            n_pop = self.pop.counts[cells[:, 0], cells[:, 2]]
            s_vals = np.minimum(s_vals, n_pop)
            prob = sero_prob(s_vals, n_pop, params.k_sens, params.k_spec)
            sero_lp = (
                self._sero_const
                + self._sero_y * np.log(prob)
                + (self._sero_n - self._sero_y) * np.log1p(-prob)
            )
            if not np.all(np.isfinite(sero_lp)):
                bad = int(np.argwhere(~np.isfinite(sero_lp))[0][0])
                raise NumericalError(
                    f"non-finite serology likelihood at (region, day, age) = {tuple(cells[bad])}"
                )
            # per-region accumulation keeps the region factorisation exact
            sero_by_region = np.bincount(
                cells[:, 0], weights=sero_lp, minlength=self.pop.n_regions
            )
            sero_total = float(sero_by_region.sum())
        else:
            sero_total = 0.0
        return LogLikelihood(total=death_total + sero_total, deaths=death_total, serology=sero_total)

    def g(self, params: StaticParams, field) -> float:
        return self.g_breakdown(params, field).total

    def simulate(self, params: StaticParams, field: TransmissionField):
        """Full trajectory over the data horizon (fresh arrays)."""
        return simulate(
            params, field, self.schedule, self.pop, self.n_steps, self.delta, self.delta_beta
        )


def log_likelihood(
    params: StaticParams,
    field: TransmissionField,
    data: SurveillanceData,
    schedule: ContactSchedule,
    pop: PopulationStructure,
    delay: DelayDistribution,
    delta: float,
    delta_beta: float,
) -> LogLikelihood:
    """One-shot log-likelihood; builds a throwaway evaluator."""
    ev = LikelihoodEvaluator(data, pop, schedule, delay, delta, delta_beta)
    return ev.g_breakdown(params, field)
