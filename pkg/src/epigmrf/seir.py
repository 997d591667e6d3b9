"""Deterministic discretised SEIR dynamics stratified by region and age.

Transmission is driven by the latent log-transmission field through

    b_ij = exp(beta) * z * C_ij,
    lambda_i = 1 - exp(-delta * sum_j b_ij * I_j / N_j),

and compartment exits use exact exponential fractions 1 - exp(-delta/d) so
states stay nonnegative for any step size. State arithmetic is real-valued;
stochasticity enters only through the field and the observation models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .gmrf import FIELD_CAP, TransmissionField, step_knot_indices


@dataclass(frozen=True)
class PopulationStructure:
    """Person counts per (region, age)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 2:
            raise ConfigError("population counts must be (regions, ages)")
        if np.any(c <= 0.0):
            raise ConfigError("population counts must be positive")
        object.__setattr__(self, "counts", c)

    @property
    def n_regions(self) -> int:
        return self.counts.shape[0]

    @property
    def n_ages(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class StaticParams:
    """Non-dynamic model parameters.

    eta     negative-binomial dispersion (variance = mu * (1 + eta))
    d_L     mean latent period, days
    d_I     mean infectious period, days
    k_sens  serological test sensitivity
    k_spec  serological test specificity
    p       infection-fatality ratio per age, shape (A,)
    z       contact multipliers per region and schedule slot, shape (M, 3)
    psi     initial growth parameter per region, shape (M,)
    ell0    log of the initial infectious seed mass per region, shape (M,)
    """

    eta: float
    d_L: float
    d_I: float
    k_sens: float
    k_spec: float
    p: np.ndarray
    z: np.ndarray
    psi: np.ndarray
    ell0: np.ndarray

    def __post_init__(self):
        for name in ("p", "z", "psi", "ell0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.eta <= 0.0 or self.d_L <= 0.0 or self.d_I <= 0.0:
            raise ConfigError("eta, d_L and d_I must be positive")
        for name in ("k_sens", "k_spec"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if np.any(self.p <= 0.0) or np.any(self.p >= 1.0):
            raise ConfigError("infection-fatality ratios must lie in (0, 1)")
        if self.z.ndim != 2 or self.z.shape[1] != 3:
            raise ConfigError("contact multipliers must have shape (regions, 3)")
        if np.any(self.z <= 0.0):
            raise ConfigError("contact multipliers must be positive")
        m = self.z.shape[0]
        if self.psi.shape != (m,) or self.ell0.shape != (m,):
            raise ConfigError("psi and ell0 must have one entry per region")

    @property
    def n_regions(self) -> int:
        return self.z.shape[0]

    @property
    def n_ages(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class ContactPeriod:
    """One stretch of the contact schedule.

    start_step is the first ODE step (1-based) the period covers; matrices is
    (regions, ages, ages) expected contacts per time unit; slot selects which
    column of the z multiplier table applies.
    """

    start_step: int
    matrices: np.ndarray
    slot: int

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=np.float64)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ConfigError("contact matrices must be (regions, ages, ages)")
        if np.any(m < 0.0):
            raise ConfigError("contact matrices must be nonnegative")
        if self.slot not in (0, 1, 2):
            raise ConfigError("multiplier slot must be 0, 1 or 2")
        if self.start_step < 1:
            raise ConfigError("periods start at step 1 or later")
        object.__setattr__(self, "matrices", m)


@dataclass(frozen=True)
class ContactSchedule:
    """Ordered contact periods tiling the simulation horizon without overlap."""

    periods: tuple

    def __post_init__(self):
        periods = tuple(self.periods)
        if not periods:
            raise ConfigError("schedule needs at least one period")
        if periods[0].start_step != 1:
            raise ConfigError("first period must start at step 1")
        starts = [p.start_step for p in periods]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError("period start steps must be strictly increasing")
        shape = periods[0].matrices.shape
        if any(p.matrices.shape != shape for p in periods):
            raise ConfigError("all periods must share the contact matrix shape")
        object.__setattr__(self, "periods", periods)

    @property
    def n_regions(self) -> int:
        return self.periods[0].matrices.shape[0]

    @property
    def n_ages(self) -> int:
        return self.periods[0].matrices.shape[1]

    def period_index(self, n_steps: int) -> np.ndarray:
        """Period id per step 1..n_steps; the final period extends indefinitely."""
        starts = np.array([p.start_step for p in self.periods])
        steps = np.arange(1, n_steps + 1)
        return np.searchsorted(starts, steps, side="right") - 1

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """(periods, M, A, A) matrices and the (periods,) slot vector."""
        mats = np.stack([p.matrices for p in self.periods])
        slots = np.array([p.slot for p in self.periods], dtype=np.int64)
        return mats, slots


@dataclass(frozen=True)
class EpidemicTrajectory:
    """Compartment paths and per-step new infections.

    Compartments have shape (regions, n_steps + 1, ages) including the
    initial state; new_infections has shape (regions, n_steps, ages) where
    slot k-1 holds the infections in (t_{k-1}, t_k].
    """

    susceptible: np.ndarray
    exposed: np.ndarray
    infectious: np.ndarray
    removed: np.ndarray
    new_infections: np.ndarray
    delta: float

    @property
    def n_regions(self) -> int:
        return self.susceptible.shape[0]

    @property
    def n_steps(self) -> int:
        return self.new_infections.shape[1]

    @property
    def n_ages(self) -> int:
        return self.susceptible.shape[2]

    @property
    def steps_per_day(self) -> int:
        spd = round(1.0 / self.delta)
        if abs(spd * self.delta - 1.0) > 1e-12:
            raise ConfigError("delta must divide one day exactly")
        return spd

    def daily_new_infections(self) -> np.ndarray:
        """Sub-daily infections aggregated to whole days, (regions, days, ages)."""
        spd = self.steps_per_day
        if self.n_steps % spd != 0:
            raise ValueError("trajectory does not cover whole days")
        days = self.n_steps // spd
        return self.new_infections.reshape(self.n_regions, days, spd, self.n_ages).sum(axis=2)

    def susceptible_at_day_ends(self) -> np.ndarray:
        """S at the end of each whole day, (regions, days, ages)."""
        spd = self.steps_per_day
        days = self.n_steps // spd
        idx = (np.arange(1, days + 1)) * spd
        return self.susceptible[:, idx, :]


def infection_rate(field_value, contacts, z_mult, infectious_frac, delta):
    """Per-age infection probability over one step of length delta.

    contacts is (A, A); infectious_frac is I/N per age. Returns values
    in [0, 1).
    """
    contacts = np.asarray(contacts, dtype=np.float64)
    if np.any(contacts < 0.0):
        raise ValueError("contact matrix entries must be nonnegative")
    b = np.exp(min(field_value, FIELD_CAP)) * z_mult * contacts
    force = b @ np.asarray(infectious_frac, dtype=np.float64)
    # 1 - exp(-x) rounds to 1.0 for x > ~37; keep the rate strictly below one
    return np.minimum(-np.expm1(-delta * force), np.nextafter(1.0, 0.0))


def compartment_exit_fraction(delta: float, mean_duration: float) -> float:
    """Fraction leaving a compartment in one step: 1 - exp(-delta/d)."""
    return -np.expm1(-delta / mean_duration)


def seir_step(s, e, i, r, lam, exit_e, exit_i):
    """One transfer step; returns updated compartments and the new infections."""
    new = s * lam
    e_out = e * exit_e
    i_out = i * exit_i
    return s - new, e + new - e_out, i + e_out - i_out, r + i_out, new


def initial_state(params: StaticParams, pop: PopulationStructure):
    """Deterministic seeding at t_0.

    The infectious seed mass exp(ell0) is split across ages proportionally to
    population; the companion exposed mass is exp(ell0) * (d_L/d_I) *
    exp(psi * d_L), apportioned the same way.
    """
    shares = pop.counts / pop.counts.sum(axis=1, keepdims=True)
    seed_i = np.exp(params.ell0)
    seed_e = seed_i * (params.d_L / params.d_I) * np.exp(params.psi * params.d_L)
    i0 = seed_i[:, None] * shares
    e0 = seed_e[:, None] * shares
    s0 = pop.counts - e0 - i0
    if np.any(s0 < 0.0):
        raise ConfigError("initial seed mass exceeds the population")
    return s0, e0, i0, np.zeros_like(s0)


def _simulate_core(params, field_values, knot_idx, zc_by_period, period_idx, pop, delta, out):
    """Shared loop behind simulate(); writes into preallocated arrays."""
    s_traj, e_traj, i_traj, r_traj, dnew = out
    s, e, i, r = initial_state(params, pop)
    s_traj[:, 0, :] = s
    e_traj[:, 0, :] = e
    i_traj[:, 0, :] = i
    r_traj[:, 0, :] = r
    exit_e = compartment_exit_fraction(delta, params.d_L)
    exit_i = compartment_exit_fraction(delta, params.d_I)
    ebeta = np.exp(np.minimum(field_values, FIELD_CAP))[knot_idx, :]
    counts = pop.counts
    n_steps = period_idx.shape[0]
    for k in range(n_steps):
        frac = i / counts
        force = ebeta[k][:, None] * np.matmul(zc_by_period[period_idx[k]], frac[..., None])[..., 0]
        lam = -np.expm1(-delta * force)
        new = s * lam
        e_out = e * exit_e
        i_out = i * exit_i
        s = s - new
        e = e + new - e_out
        i = i + e_out - i_out
        r = r + i_out
        dnew[:, k, :] = new
        s_traj[:, k + 1, :] = s
        e_traj[:, k + 1, :] = e
        i_traj[:, k + 1, :] = i
        r_traj[:, k + 1, :] = r


def _scaled_contacts(params: StaticParams, schedule: ContactSchedule) -> np.ndarray:
    """Per-period (M, A, A) contacts with the slot multiplier applied."""
    mats, slots = schedule.stacked()
    zfac = params.z[:, slots].T
    return mats * zfac[:, :, None, None]


def simulate(
    params: StaticParams,
    field: TransmissionField,
    schedule: ContactSchedule,
    pop: PopulationStructure,
    n_steps: int,
    delta: float,
    delta_beta: float,
) -> EpidemicTrajectory:
    """Run the discretised dynamics over n_steps of length delta."""
    if field.n_strata != pop.n_regions:
        raise ConfigError("field strata must match the region count")
    knot_idx = step_knot_indices(n_steps, delta, delta_beta)
    if n_steps > 0 and field.n_knots < knot_idx[-1] + 1:
        raise ConfigError("field does not cover the simulation horizon")
    m, a = pop.n_regions, pop.n_ages
    out = (
        np.empty((m, n_steps + 1, a)),
        np.empty((m, n_steps + 1, a)),
        np.empty((m, n_steps + 1, a)),
        np.empty((m, n_steps + 1, a)),
        np.empty((m, n_steps, a)),
    )
    zc = _scaled_contacts(params, schedule)
    period_idx = schedule.period_index(n_steps)
    _simulate_core(params, field.values, knot_idx, zc, period_idx, pop, delta, out)
    return EpidemicTrajectory(*out, delta=delta)


def reproduction_number(
    params: StaticParams,
    field_value: float,
    contacts: np.ndarray,
    z_mult: float,
    susceptible_frac: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> float:
    """d_I times the dominant eigenvalue of the next-generation matrix.

    The matrix is K_ij = exp(beta) * z * C_ij * s_i with s the susceptible
    fraction per age; the eigenvalue comes from power iteration.
    """
    contacts = np.asarray(contacts, dtype=np.float64)
    sfrac = np.asarray(susceptible_frac, dtype=np.float64)
    k = np.exp(min(field_value, FIELD_CAP)) * z_mult * contacts * sfrac[:, None]
    if not np.any(k):
        return 0.0
    v = np.full(k.shape[0], 1.0 / np.sqrt(k.shape[0]))
    lam_old = 0.0
    for _ in range(max_iter):
        w = k @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam = float(v @ (k @ v))
        if abs(lam - lam_old) <= tol * max(1.0, abs(lam)):
            return params.d_I * lam
        lam_old = lam
    raise NumericalError("power iteration did not converge")
