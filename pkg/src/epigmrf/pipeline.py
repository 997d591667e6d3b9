"""Subcommand implementations behind the command-line interface.

Each function is deterministic given (config, seed); all produced files carry
a metadata header with the package version, seed and config hash.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import RunConfig, ScenarioSpec
from .dataio import (
    DEATHS_COLUMNS,
    _parse_int,
    metadata_line,
    load_contacts,
    load_delay,
    load_populations,
    load_surveillance,
    read_draws_wide,
    read_forecasts,
    read_table,
    write_draws_long,
    write_draws_wide,
    write_forecasts,
    write_scores,
    write_table,
)
from .diagnostics import split_rhat, summarize
from .engine import DrawsStore, EpidemicModel, McmcSettings, run_chain
from .errors import ConfigError
from .forecast import ForecastDraws, forecast, score_forecasts
from .gmrf import (
    PrecisionSpec,
    StructureKind,
    TransmissionField,
    build_precision,
    n_knots_for_days,
)
from .mcmc import ThetaTransform
from .observation import LikelihoodEvaluator, SurveillanceData
from .simulate import generate_dataset, write_dataset


def cmd_simulate(spec: ScenarioSpec, out_dir, seed: int, replicates: int = 1) -> list:
    """Generate replicate datasets under sequential seeds from the master seed."""
    out_dirs = []
    for r in range(replicates):
        rep_seed = seed + r
        target = Path(out_dir) / f"rep{r:02d}" if replicates > 1 else Path(out_dir)
        ds = generate_dataset(spec, rep_seed)
        write_dataset(ds, target)
        out_dirs.append(target)
    return out_dirs


class FitInputs:
    """Loaded data plus the assembled model for one fit."""

    def __init__(self, config: RunConfig, base_dir=None):
        config.data.validate_paths(base_dir)
        paths = config.data.paths(base_dir)
        model_cfg = config.model
        steps_per_day = round(1.0 / model_cfg.delta)
        self.config = config
        self.pop = load_populations(paths["populations"])
        self.data = load_surveillance(
            paths["deaths"], paths["serology"], self.pop, steps_per_day
        )
        self.schedule = load_contacts(paths["contacts"], self.pop.n_ages, steps_per_day)
        self.delay = load_delay(paths["delay"])
        self.train_days = self.data.n_days
        n_knots = n_knots_for_days(self.train_days, model_cfg.delta_beta)
        self.prec_spec = PrecisionSpec(
            tau=model_cfg.tau,
            rho_m=model_cfg.rho_m,
            rho_time=model_cfg.rho_time,
            p_m_kind=StructureKind(model_cfg.p_m_kind),
            p_k_kind=StructureKind(model_cfg.p_k_kind),
            n_strata=self.pop.n_regions,
            n_knots=n_knots,
            delta_beta=model_cfg.delta_beta,
        )
        self.precision = build_precision(self.prec_spec)
        self.base_params = model_cfg.base_params()
        evaluator = LikelihoodEvaluator(
            self.data, self.pop, self.schedule, self.delay, model_cfg.delta, model_cfg.delta_beta
        )
        transform = ThetaTransform(self.base_params, model_cfg.sampled_params)
        self.model = EpidemicModel(
            evaluator=evaluator,
            transform=transform,
            priors=model_cfg.param_priors(),
            precision=self.precision,
            paper_exponent=model_cfg.paper_exponent,
        )

    def initial_field(self) -> TransmissionField:
        """Flat field at the configured level, or per-region growth-neutral."""
        setting = self.config.model.field_init
        n_knots, m = self.prec_spec.n_knots, self.pop.n_regions
        if setting == "auto":
            levels = np.empty(m)
            first = self.schedule.periods[0]
            for region in range(m):
                contacts = first.matrices[region] * self.base_params.z[region, first.slot]
                lam = np.max(np.abs(np.linalg.eigvals(contacts)))
                levels[region] = -np.log(max(self.base_params.d_I * lam, 1e-12))
            return TransmissionField(np.tile(levels, (n_knots, 1)))
        return TransmissionField(np.full((n_knots, m), float(setting)))

    def mcmc_settings(self) -> McmcSettings:
        cfg = self.config.mcmc
        return McmcSettings(
            iterations=cfg.iterations,
            burnin=cfg.burnin,
            thinning=cfg.thinning,
            n_blocks=cfg.blocks,
            c_init=cfg.c_init,
            tau_sampled=self.config.model.tau_sampled,
            tau_prior_shape=self.config.model.tau_prior_shape,
            tau_prior_rate=self.config.model.tau_prior_rate,
            checkpoint_every=cfg.checkpoint_every,
        )


def chain_seed(master_seed: int, chain: int) -> list:
    """Independent stream per chain from the (master seed, chain id) pair."""
    return [master_seed, chain]


def cmd_fit(config: RunConfig, out_dir, base_dir=None, resume: bool = False) -> list:
    """Fit every configured chain and write draws, acceptance and diagnostics."""
    inputs = FitInputs(config, base_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    settings = inputs.mcmc_settings()
    results = []
    config_hash = config.config_hash()
    for chain in range(config.mcmc.chains):
        chain_dir = out / f"chain{chain:02d}"
        chain_dir.mkdir(parents=True, exist_ok=True)
        checkpoint = chain_dir / "checkpoint.npz"
        result = run_chain(
            inputs.model,
            settings,
            chain_seed(config.mcmc.seed, chain),
            initial_params=inputs.base_params,
            initial_field=inputs.initial_field(),
            checkpoint_path=checkpoint if settings.checkpoint_every else None,
            resume=resume and checkpoint.exists(),
        )
        meta = metadata_line(config.mcmc.seed, config_hash, chain=chain)
        write_draws_long(chain_dir / "draws_long.csv", result.draws, meta)
        write_draws_wide(chain_dir / "draws_wide.csv", result.draws, meta)
        acc_rows = [(k, v) for k, v in sorted(result.acceptance.items())]
        acc_rows.append(("seconds", result.seconds))
        write_table(chain_dir / "acceptance.csv", ["move", "rate"], acc_rows, meta)
        results.append(result)
    _write_diagnostics(out, [r.draws for r in results], config.mcmc.seed, config_hash)
    return results


def _write_diagnostics(out: Path, draws_list, seed, config_hash):
    matrices = []
    names = None
    for draws in draws_list:
        matrix, nm = draws.parameter_matrix()
        matrices.append(matrix)
        names = nm
    meta = metadata_line(seed, config_hash)
    pooled = np.vstack(matrices)
    try:
        rows = summarize(pooled, names)
    except ConfigError:
        return
    table = []
    for j, row in enumerate(rows):
        chains_j = [m[:, j] for m in matrices]
        try:
            rhat = split_rhat(chains_j)
        except ConfigError:
            rhat = float("nan")
        table.append((row["parameter"], row["mean"], row["sd"], row["ess"], rhat))
    write_table(out / "diagnostics.csv", ["parameter", "mean", "sd", "ess", "rhat"], table, meta)


def load_all_draws(fit_dir) -> DrawsStore:
    """Merge the wide tables of every chain under a fit directory."""
    fit_dir = Path(fit_dir)
    chain_dirs = sorted(fit_dir.glob("chain*/draws_wide.csv"))
    if not chain_dirs:
        raise ConfigError(f"no chain draws under {fit_dir}")
    all_names = None
    blocks = []
    iterations = []
    for path in chain_dirs:
        names, iters, matrix = read_draws_wide(path)
        if all_names is None:
            all_names = names
        elif names != all_names:
            raise ConfigError("chains disagree on the parameter layout")
        blocks.append(matrix)
        iterations.append(iters)
    matrix = np.vstack(blocks)
    iterations = np.concatenate(iterations)
    names = all_names
    has_tau = "tau" in names
    g_idx = names.index("g")
    field_idx = [j for j, n in enumerate(names) if n.startswith("beta[")]
    tau_idx = names.index("tau") if has_tau else None
    theta_idx = [
        j
        for j, n in enumerate(names)
        if j != g_idx and j not in field_idx and (tau_idx is None or j != tau_idx)
    ]
    return DrawsStore(
        theta_names=[names[j] for j in theta_idx],
        field_names=[names[j] for j in field_idx],
        theta=matrix[:, theta_idx],
        field=matrix[:, field_idx],
        g=matrix[:, g_idx],
        tau=matrix[:, tau_idx] if has_tau else None,
        iterations=iterations,
    )


def cmd_forecast(config: RunConfig, fit_dir, out_dir, base_dir=None, seed=None) -> ForecastDraws:
    """Posterior-predictive forecast from saved draws; writes forecasts.csv."""
    inputs = FitInputs(config, base_dir)
    draws = load_all_draws(fit_dir)
    if seed is None:
        seed = config.mcmc.seed
    rng = np.random.default_rng([seed, 424242])
    fc = forecast(
        draws,
        inputs.model.transform,
        inputs.prec_spec,
        inputs.pop,
        inputs.schedule,
        inputs.delay,
        config.model.delta,
        inputs.train_days,
        config.forecast.horizon_days,
        rng,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = metadata_line(seed, config.config_hash(), horizon=config.forecast.horizon_days)
    write_forecasts(out / "forecasts.csv", fc, meta, first_day=inputs.train_days + 1)
    return fc


def cmd_score(forecasts_path, truth_deaths_path, out_dir, alpha: float = 0.05, seed=0):
    """Score saved forecasts against held-out deaths; idempotent."""
    deaths, first_day = read_forecasts(forecasts_path)
    n_draws, m_count, n_days, a_count = deaths.shape
    rows, _ = read_table(truth_deaths_path, DEATHS_COLUMNS)
    truth = np.full((m_count, n_days, a_count), -1, dtype=np.int64)
    for lineno, f in rows:
        m = _parse_int(truth_deaths_path, lineno, "region", f[0])
        d = _parse_int(truth_deaths_path, lineno, "day", f[1])
        i = _parse_int(truth_deaths_path, lineno, "age", f[2])
        y = _parse_int(truth_deaths_path, lineno, "count", f[3])
        di = d - first_day
        if 0 <= di < n_days:
            if not (0 <= m < m_count and 0 <= i < a_count):
                raise ConfigError(f"{truth_deaths_path}:{lineno}: region/age outside forecast grid")
            truth[m, di, i] = y
    if np.any(truth < 0):
        raise ConfigError("truth does not cover the forecast horizon")
    fc = ForecastDraws(
        deaths=deaths,
        death_mean=deaths.astype(np.float64),
        field_future=np.zeros((n_draws, 0, m_count)),
        horizon_days=n_days,
    )
    truth_data = SurveillanceData(
        truth, np.zeros_like(truth), np.zeros_like(truth), steps_per_day=1
    )
    report = score_forecasts(fc, truth_data, alpha=alpha)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = metadata_line(seed, "none", alpha=alpha)
    write_scores(out / "scores.csv", report, meta, first_day=first_day)
    by_day = report.by_day()
    day_rows = [
        (first_day + d, by_day["interval_score"][d], by_day["crps"][d], by_day["width"][d], by_day["sq_error"][d])
        for d in range(n_days)
    ]
    write_table(
        out / "scores_by_day.csv",
        ["day", "interval_score", "crps", "width", "sq_error"],
        day_rows,
        meta,
    )
    by_region = report.by_region()
    region_rows = [
        (
            m,
            by_region["interval_score"][m],
            by_region["crps"][m],
            by_region["width"][m],
            by_region["sq_error"][m],
            report.region_rmse()[m],
        )
        for m in range(m_count)
    ]
    write_table(
        out / "scores_by_region.csv",
        ["region", "interval_score", "crps", "width", "sq_error", "rmse"],
        region_rows,
        meta,
    )
    return report


def cmd_diagnose(fit_dirs, out_path, seed=0):
    """Cross-chain diagnostics (mean, sd, ESS, split R-hat) per parameter."""
    matrices = []
    names = None
    for fit_dir in fit_dirs:
        for path in sorted(Path(fit_dir).glob("chain*/draws_wide.csv")):
            nm, _, matrix = read_draws_wide(path)
            if names is None:
                names = nm
            elif nm != names:
                raise ConfigError("chains disagree on the parameter layout")
            matrices.append(matrix)
    if not matrices:
        raise ConfigError("no chain draws found to diagnose")
    pooled = np.vstack(matrices)
    rows = summarize(pooled, names)
    table = []
    for j, row in enumerate(rows):
        try:
            rhat = split_rhat([m[:, j] for m in matrices])
        except ConfigError:
            rhat = float("nan")
        table.append((row["parameter"], row["mean"], row["sd"], row["ess"], rhat))
    meta = metadata_line(seed, "none", chains=len(matrices))
    out_path = Path(out_path)
    write_table(out_path, ["parameter", "mean", "sd", "ess", "rhat"], table, meta)
    return table
