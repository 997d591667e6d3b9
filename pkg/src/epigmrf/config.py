"""Run configuration and synthetic-scenario specifications.

Configs are plain dataclasses serialised to JSON; parse -> serialise ->
parse is the identity. The config hash recorded in output headers is the
SHA-256 of the canonical JSON form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mcmc import SAMPLEABLE_GROUPS, ParamPrior
from .seir import StaticParams


@dataclass(frozen=True)
class PriorConfig:
    dist: str
    mu: object
    sigma: float

    def to_param_prior(self) -> ParamPrior:
        return ParamPrior(dist=self.dist, mu=self.mu, sigma=self.sigma)


@dataclass(frozen=True)
class ModelConfig:
    """Model block: discretisation, lattice structure and priors."""

    delta: float
    delta_beta: float
    p_m_kind: str
    p_k_kind: str
    rho_m: float
    rho_time: float
    tau: float
    tau_sampled: bool
    tau_prior_shape: float
    tau_prior_rate: float
    sampled_params: tuple
    priors: dict
    theta_init: dict
    field_init: object = "auto"
    paper_exponent: bool = False

    def __post_init__(self):
        d = Fraction(self.delta).limit_denominator(1_000_000)
        db = Fraction(self.delta_beta).limit_denominator(1_000_000)
        if (Fraction(1) / d).denominator != 1:
            raise ConfigError("delta must divide one day exactly")
        if (db / d).denominator != 1:
            raise ConfigError("delta_beta must be an integer multiple of delta")
        unknown = [s for s in self.sampled_params if s not in SAMPLEABLE_GROUPS]
        if unknown:
            raise ConfigError(f"unknown sampled parameter groups: {unknown}")
        object.__setattr__(self, "sampled_params", tuple(self.sampled_params))

    def base_params(self) -> StaticParams:
        t = self.theta_init
        return StaticParams(
            eta=t["eta"],
            d_L=t["d_L"],
            d_I=t["d_I"],
            k_sens=t["k_sens"],
            k_spec=t["k_spec"],
            p=np.asarray(t["p"], dtype=np.float64),
            z=np.asarray(t["z"], dtype=np.float64),
            psi=np.asarray(t["psi"], dtype=np.float64),
            ell0=np.asarray(t["ell0"], dtype=np.float64),
        )

    def param_priors(self) -> dict:
        return {name: cfg.to_param_prior() for name, cfg in self.priors.items()}


@dataclass(frozen=True)
class McmcConfig:
    iterations: int
    burnin: int
    thinning: int
    chains: int
    blocks: int
    seed: int
    c_init: float = 1.0
    checkpoint_every: int | None = None

    def __post_init__(self):
        if self.burnin >= self.iterations:
            raise ConfigError("burn-in must be smaller than iterations")
        if min(self.thinning, self.chains, self.blocks) < 1:
            raise ConfigError("thinning, chains and blocks must be positive")


@dataclass(frozen=True)
class DataConfig:
    deaths: str
    serology: str
    populations: str
    contacts: str
    delay: str

    def paths(self, base: Path | None = None) -> dict:
        out = {}
        for name in ("deaths", "serology", "populations", "contacts", "delay"):
            p = Path(getattr(self, name))
            if base is not None and not p.is_absolute():
                p = base / p
            out[name] = p
        return out

    def validate_paths(self, base: Path | None = None):
        for name, p in self.paths(base).items():
            if not p.exists():
                raise ConfigError(f"missing {name} file: {p}")


@dataclass(frozen=True)
class ForecastSettings:
    horizon_days: int
    alpha: float = 0.05

    def __post_init__(self):
        if self.horizon_days < 0:
            raise ConfigError("horizon must be nonnegative")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    mcmc: McmcConfig
    data: DataConfig
    forecast: ForecastSettings

    def to_json(self) -> str:
        payload = asdict(self)
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        model = dict(payload["model"])
        model["priors"] = {
            name: PriorConfig(**p) for name, p in model.get("priors", {}).items()
        }
        model["sampled_params"] = tuple(model["sampled_params"])
        return cls(
            model=ModelConfig(**model),
            mcmc=McmcConfig(**payload["mcmc"]),
            data=DataConfig(**payload["data"]),
            forecast=ForecastSettings(**payload["forecast"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from exc
        try:
            return cls.from_dict(payload)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"config is missing or misnames a field: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"missing config file: {path}")
        return cls.from_json(path.read_text())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


DEFAULT_PRIORS = {
    "eta": PriorConfig("lognormal", float(np.log(0.25)), 0.5),
    "d_I": PriorConfig("lognormal", float(np.log(4.0)), 0.25),
    "k_sens": PriorConfig("logitnormal", 0.0, 1.5),
    "k_spec": PriorConfig("logitnormal", 0.0, 1.5),
    "p": PriorConfig("logitnormal", 0.0, 1.5),
    "z": PriorConfig("lognormal", 0.0, 0.5),
    "psi": PriorConfig("normal", 0.0, 0.5),
    "ell0": PriorConfig("normal", 3.0, 2.0),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Synthetic data-generation scenario; the truth is always on disk.

    scenario "A" couples neighbouring regions through a random-walk structure
    across strata; "B" uses the identity across strata. Both share the same
    temporal random walk and generate at half-day knots.
    """

    scenario: str
    n_days: int
    train_days: int
    n_regions: int
    n_ages: int
    delta: float
    delta_beta: float
    tau: float
    rho_m: float
    rho_time: float
    field_level: float
    theta: dict
    populations: list
    contact_matrix: list
    contact_scale_by_region: list
    period_start_days: list
    period_slots: list
    serology_every: int
    serology_samples: int
    delay_mean: float
    delay_sd: float
    delay_max_lag: int

    def __post_init__(self):
        if self.scenario not in ("A", "B"):
            raise ConfigError("scenario must be 'A' or 'B'")
        if not 0 < self.train_days < self.n_days:
            raise ConfigError("train/test split must sum to the horizon")

    @property
    def test_days(self) -> int:
        return self.n_days - self.train_days

    def true_params(self) -> StaticParams:
        t = self.theta
        return StaticParams(
            eta=t["eta"],
            d_L=t["d_L"],
            d_I=t["d_I"],
            k_sens=t["k_sens"],
            k_spec=t["k_spec"],
            p=np.asarray(t["p"], dtype=np.float64),
            z=np.asarray(t["z"], dtype=np.float64),
            psi=np.asarray(t["psi"], dtype=np.float64),
            ell0=np.asarray(t["ell0"], dtype=np.float64),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls(**json.loads(text))


def _default_theta(n_regions: int, n_ages: int) -> dict:
    """Documented synthetic-truth defaults; stored verbatim in scenario files.

    The overall transmission level lives in the contact scale, so the latent
    field is a plain zero-mean lattice draw; slot 0 is the open period and
    slots 1-2 carry a persistent contact reduction whose onset puts the death
    peak inside the training window.
    """
    p = np.geomspace(4e-3, 0.15, n_ages)
    z = np.column_stack(
        [
            1.0 + 0.05 * np.arange(n_regions),
            0.45 * np.ones(n_regions),
            0.45 * np.ones(n_regions),
        ]
    )
    seeds = 2000.0 * (1.0 + 0.5 * np.arange(n_regions))
    return {
        "eta": 0.25,
        "d_L": 3.0,
        "d_I": 4.0,
        "k_sens": 0.85,
        "k_spec": 0.98,
        "p": p.tolist(),
        "z": z.tolist(),
        "psi": (0.15 * np.ones(n_regions)).tolist(),
        "ell0": np.log(seeds).tolist(),
    }


def _mixing_matrix(n_ages: int) -> np.ndarray:
    ages = np.arange(n_ages)
    return 2.5 * np.exp(-np.abs(ages[:, None] - ages[None, :]) / 1.5) + 0.5


def desk_scenario(scenario: str = "A") -> ScenarioSpec:
    """Small profile used by the test suite: 3 regions, 2 ages, 40 days."""
    m, a = 3, 2
    return ScenarioSpec(
        scenario=scenario,
        n_days=40,
        train_days=30,
        n_regions=m,
        n_ages=a,
        delta=0.5,
        delta_beta=0.5,
        tau=25.0,
        rho_m=0.5,
        rho_time=1.5,
        field_level=0.0,
        theta=_default_theta(m, a),
        populations=(2.0e6 * (1.0 + 0.3 * np.arange(m))[:, None] * np.array([0.55, 0.45]))
        .tolist(),
        contact_matrix=_mixing_matrix(a).tolist(),
        contact_scale_by_region=(0.086 * (1.0 + 0.1 * np.arange(m))).tolist(),
        period_start_days=[1, 13],
        period_slots=[0, 1],
        serology_every=5,
        serology_samples=400,
        delay_mean=8.0,
        delay_sd=4.0,
        delay_max_lag=25,
    )


def paper_scenario(scenario: str = "A") -> ScenarioSpec:
    """Full-size profile: 7 regions, 8 age groups, 100 days split 86/14."""
    m, a = 7, 8
    age_shares = np.array([0.01, 0.05, 0.12, 0.12, 0.27, 0.25, 0.09, 0.09])
    pops = 8.0e5 * (1.0 + 0.2 * np.arange(m))[:, None] * age_shares
    return ScenarioSpec(
        scenario=scenario,
        n_days=100,
        train_days=86,
        n_regions=m,
        n_ages=a,
        delta=0.5,
        delta_beta=0.5,
        tau=100.0,
        rho_m=0.5,
        rho_time=1.5,
        field_level=0.0,
        theta=_default_theta(m, a),
        populations=pops.tolist(),
        contact_matrix=_mixing_matrix(a).tolist(),
        contact_scale_by_region=(0.03 * (1.0 + 0.05 * np.arange(m))).tolist(),
        period_start_days=[1, 32],
        period_slots=[0, 1],
        serology_every=7,
        serology_samples=350,
        delay_mean=19.0,
        delay_sd=9.0,
        delay_max_lag=60,
    )


def scenario_profile(profile: str, scenario: str) -> ScenarioSpec:
    if profile == "desk":
        return desk_scenario(scenario)
    if profile == "paper":
        return paper_scenario(scenario)
    raise ConfigError(f"unknown profile {profile!r}")
