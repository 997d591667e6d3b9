"""Chain orchestration: the full posterior sampler loop with checkpointing.

Each iteration runs the randomised-block static update, then the
auxiliary-variable field update, then an optional conjugate tau draw, and
adapts proposal tuning during burn-in only. Thinned draws of (theta, field,
g) are recorded after burn-in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, NumericalError
from .gmrf import SparsePrecision, TransmissionField, log_prior_density
from .mcmc import (
    AdaptationState,
    AdaptiveBlockSampler,
    AuxiliaryFieldSampler,
    ParamPrior,
    ThetaTransform,
    gibbs_tau,
)
from .observation import LikelihoodEvaluator
from .seir import StaticParams


@dataclass(frozen=True)
class McmcSettings:
    """Loop sizes and tuning knobs for one chain."""

    iterations: int
    burnin: int
    thinning: int = 1
    n_blocks: int = 3
    c_init: float = 1.0
    target_accept: float = 0.234
    tau_sampled: bool = False
    tau_prior_shape: float = 1.0
    tau_prior_rate: float = 0.01
    checkpoint_every: int | None = None

    def __post_init__(self):
        if self.burnin >= self.iterations:
            raise ConfigError("burn-in must be smaller than the iteration count")
        if self.thinning < 1 or self.n_blocks < 1:
            raise ConfigError("thinning and block count must be positive")
        if self.c_init <= 0.0:
            raise ConfigError("c_init must be positive")


@dataclass
class EpidemicModel:
    """Everything fixed for one fit: likelihood, transform, priors, prior field."""

    evaluator: LikelihoodEvaluator
    transform: ThetaTransform
    priors: dict
    precision: SparsePrecision
    paper_exponent: bool = False

    def theta_logpost(self, u: np.ndarray, flat_field: np.ndarray):
        """Static-block target: likelihood x priors x transform Jacobian."""
        params = self.transform.to_params(u)
        g = self.evaluator.g(params, flat_field)
        lp = g + self.transform.prior_logpdf(params, self.priors) + self.transform.log_jacobian(u)
        return lp, g


@dataclass
class DrawsStore:
    """Thinned posterior draws from one chain."""

    theta_names: list
    field_names: list
    theta: np.ndarray
    field: np.ndarray
    g: np.ndarray
    tau: np.ndarray | None
    iterations: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.g.size

    def parameter_matrix(self) -> tuple[np.ndarray, list]:
        """All recorded series side by side: theta, tau (if any), field, g."""
        cols = [self.theta]
        names = list(self.theta_names)
        if self.tau is not None:
            cols.append(self.tau[:, None])
            names.append("tau")
        cols.append(self.field)
        names.extend(self.field_names)
        cols.append(self.g[:, None])
        names.append("g")
        return np.hstack(cols), names


def field_param_names(n_knots: int, n_strata: int) -> list:
    return [f"beta[{k};{m}]" for m in range(n_strata) for k in range(n_knots)]


@dataclass
class ChainResult:
    draws: DrawsStore
    acceptance: dict
    seconds: float
    iterations: int


def save_checkpoint(path, state: dict):
    """Deterministic binary checkpoint: a JSON scalar header followed by
    length-delimited npy payloads (no archive timestamps, identical bytes
    for identical states)."""
    arrays = {k: v for k, v in state.items() if isinstance(v, np.ndarray)}
    scalars = {k: v for k, v in state.items() if not isinstance(v, np.ndarray)}
    header = json.dumps({"scalars": scalars, "arrays": sorted(arrays)}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for name in sorted(arrays):
            np.lib.format.write_array(fh, np.ascontiguousarray(arrays[name]), version=(1, 0))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        size = int.from_bytes(fh.read(8), "little")
        payload = json.loads(fh.read(size).decode())
        state = dict(payload["scalars"])
        for name in payload["arrays"]:
            state[name] = np.lib.format.read_array(fh)
    return state


def run_chain(
    model: EpidemicModel,
    settings: McmcSettings,
    seed,
    initial_params: StaticParams | None = None,
    initial_field: TransmissionField | None = None,
    checkpoint_path=None,
    resume: bool = False,
    validate_caches: bool = False,
) -> ChainResult:
    """Run one chain; deterministic given (model, settings, seed).

    With ``resume=True`` and an existing checkpoint the remaining iterations
    reproduce the uninterrupted run exactly: the saved rng state, adaptation
    state and accumulated draws are all restored.
    """
    import time

    transform = model.transform
    evaluator = model.evaluator
    n_field = model.precision.order
    theta_dim = transform.dim
    n_thin = (settings.iterations - settings.burnin) // settings.thinning

    theta_draws = np.zeros((n_thin, theta_dim))
    field_draws = np.zeros((n_thin, n_field))
    g_draws = np.zeros(n_thin)
    tau_draws = np.zeros(n_thin) if settings.tau_sampled else None
    iter_record = np.zeros(n_thin, dtype=np.int64)

    rng = np.random.default_rng(seed)
    theta_sampler = AdaptiveBlockSampler(
        theta_dim, settings.n_blocks, rng, target_rate=settings.target_accept
    )
    prec = model.precision
    field_sampler = AuxiliaryFieldSampler(
        prec, settings.c_init, rng, target_rate=settings.target_accept
    )

    start_iter = 0
    n_recorded = 0

    if resume and checkpoint_path is not None:
        state = load_checkpoint(checkpoint_path)
        start_iter = int(state["iteration"])
        n_recorded = int(state["n_recorded"])
        u = state["u"]
        flat = state["flat"]
        g_cur = float(state["g_cur"])
        prior_jac_cur = float(state["prior_jac_cur"])
        theta_sampler.adaptation = AdaptationState.from_state_dict(
            {
                "dim": theta_dim,
                "target_rate": settings.target_accept,
                "log_scale": state["adapt_log_scale"],
                "count": state["adapt_count"],
                "frozen": state["adapt_frozen"],
                "mean": state["adapt_mean"],
                "m2": state["adapt_m2"],
            }
        )
        theta_sampler.proposals = int(state["theta_proposals"])
        theta_sampler.accepts = int(state["theta_accepts"])
        theta_sampler.rejects_nonfinite = int(state["theta_rejects_nonfinite"])
        field_sampler.log_c = float(state["field_log_c"])
        field_sampler.frozen = bool(state["field_frozen"])
        field_sampler.proposals = int(state["field_proposals"])
        field_sampler.accepts = int(state["field_accepts"])
        if settings.tau_sampled:
            prec = prec.with_tau(float(state["tau"]))
            field_sampler.set_precision(prec)
        theta_draws[:n_recorded] = state["theta_draws"][:n_recorded]
        field_draws[:n_recorded] = state["field_draws"][:n_recorded]
        g_draws[:n_recorded] = state["g_draws"][:n_recorded]
        if tau_draws is not None:
            tau_draws[:n_recorded] = state["tau_draws"][:n_recorded]
        iter_record[:n_recorded] = state["iter_record"][:n_recorded]
        rng.bit_generator.state = json.loads(str(state["rng_state"]))
    else:
        if initial_params is None:
            initial_params = transform.base
        if initial_field is None:
            raise ConfigError("an initial field is required")
        u = transform.to_unconstrained(initial_params)
        flat = initial_field.flatten()
        if flat.size != n_field:
            raise ConfigError("initial field size does not match the precision")
        lp_init, g_cur = model.theta_logpost(u, flat)
        if not np.isfinite(lp_init):
            raise NumericalError("non-finite posterior at the initial state")
        # the static-block posterior decomposes as g + (priors + Jacobian);
        # only the g part moves when the field or tau moves
        prior_jac_cur = lp_init - g_cur

    log_prior_cur = None  # lazy cache, refreshed on field / tau changes

    def checkpoint_state(iteration):
        return {
            "iteration": iteration,
            "n_recorded": n_recorded,
            "u": u,
            "flat": flat,
            "g_cur": g_cur,
            "prior_jac_cur": prior_jac_cur,
            "adapt_log_scale": theta_sampler.adaptation.log_scale,
            "adapt_count": theta_sampler.adaptation.count,
            "adapt_frozen": theta_sampler.adaptation.frozen,
            "adapt_mean": theta_sampler.adaptation.mean,
            "adapt_m2": theta_sampler.adaptation.state_dict()["m2"],
            "theta_proposals": theta_sampler.proposals,
            "theta_accepts": theta_sampler.accepts,
            "theta_rejects_nonfinite": theta_sampler.rejects_nonfinite,
            "field_log_c": field_sampler.log_c,
            "field_frozen": field_sampler.frozen,
            "field_proposals": field_sampler.proposals,
            "field_accepts": field_sampler.accepts,
            "tau": prec.tau,
            "theta_draws": theta_draws,
            "field_draws": field_draws,
            "g_draws": g_draws,
            "tau_draws": tau_draws if tau_draws is not None else np.empty(0),
            "iter_record": iter_record,
            "rng_state": json.dumps(rng.bit_generator.state, sort_keys=True),
        }

    t_start = time.perf_counter()
    for iteration in range(start_iter + 1, settings.iterations + 1):
        def theta_logpost(u_prop):
            return model.theta_logpost(u_prop, flat)

        lp_theta = prior_jac_cur + g_cur
        u, (lp_theta, g_cur), flags = theta_sampler.step(u, theta_logpost, (lp_theta, g_cur))
        prior_jac_cur = lp_theta - g_cur
        params = transform.to_params(u)

        def g_fn(flat_prop):
            return evaluator.g(params, flat_prop)

        flat, g_cur, accepted_field = field_sampler.step(flat, g_fn, g_cur)
        if accepted_field:
            log_prior_cur = None

        if settings.tau_sampled:
            _, prec = gibbs_tau(
                flat, prec, settings.tau_prior_shape, settings.tau_prior_rate, rng
            )
            field_sampler.set_precision(prec)
            log_prior_cur = None

        if iteration <= settings.burnin:
            theta_sampler.adapt(flags, u, iteration)
            field_sampler.adapt(accepted_field, iteration)
            if iteration == settings.burnin:
                theta_sampler.adaptation.freeze()
                field_sampler.freeze()

        if validate_caches:
            lp_check, g_check = model.theta_logpost(u, flat)
            if abs(g_check - g_cur) > 1e-10 * max(1.0, abs(g_check)):
                raise NumericalError(f"stale likelihood cache at iteration {iteration}")
            if abs(lp_check - (prior_jac_cur + g_cur)) > 1e-10 * max(1.0, abs(lp_check)):
                raise NumericalError(f"stale posterior cache at iteration {iteration}")
            if log_prior_cur is None:
                current_field = TransmissionField.from_flat(
                    flat, prec.spec.n_knots, prec.spec.n_strata
                )
                log_prior_cur = log_prior_density(
                    current_field, prec, paper_exponent=model.paper_exponent
                )

        if iteration > settings.burnin and (iteration - settings.burnin) % settings.thinning == 0:
            theta_draws[n_recorded] = transform.constrained_vector(params)
            field_draws[n_recorded] = flat
            g_draws[n_recorded] = g_cur
            if tau_draws is not None:
                tau_draws[n_recorded] = prec.tau
            iter_record[n_recorded] = iteration
            n_recorded += 1

        if (
            checkpoint_path is not None
            and settings.checkpoint_every
            and iteration % settings.checkpoint_every == 0
        ):
            save_checkpoint(checkpoint_path, checkpoint_state(iteration))

    seconds = time.perf_counter() - t_start
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, checkpoint_state(settings.iterations))

    spec = model.precision.spec
    draws = DrawsStore(
        theta_names=list(transform.names),
        field_names=field_param_names(spec.n_knots, spec.n_strata),
        theta=theta_draws[:n_recorded],
        field=field_draws[:n_recorded],
        g=g_draws[:n_recorded],
        tau=tau_draws[:n_recorded] if tau_draws is not None else None,
        iterations=iter_record[:n_recorded],
        meta={
            "iterations": settings.iterations,
            "burnin": settings.burnin,
            "thinning": settings.thinning,
            "final_c": field_sampler.c,
        },
    )
    acceptance = {
        "theta": theta_sampler.acceptance_rate,
        "field": field_sampler.acceptance_rate,
        "theta_nonfinite_rejects": theta_sampler.rejects_nonfinite,
    }
    return ChainResult(
        draws=draws, acceptance=acceptance, seconds=seconds, iterations=settings.iterations
    )


def joint_random_walk_chain(
    model: EpidemicModel,
    settings: McmcSettings,
    seed,
    initial_params: StaticParams,
    initial_field: TransmissionField,
) -> ChainResult:
    """Plain joint random-walk baseline: one adaptive full-vector Metropolis
    update over (theta, field) per iteration, targeting the same posterior."""
    import time

    transform = model.transform
    prec = model.precision
    theta_dim = transform.dim
    n_field = prec.order
    dim = theta_dim + n_field
    n_thin = (settings.iterations - settings.burnin) // settings.thinning

    rng = np.random.default_rng(seed)
    sampler = AdaptiveBlockSampler(dim, 1, rng, target_rate=settings.target_accept)

    def logpost(x):
        u = x[:theta_dim]
        flat = x[theta_dim:]
        params = transform.to_params(u)
        g = model.evaluator.g(params, flat)
        lp = (
            g
            + transform.prior_logpdf(params, model.priors)
            + transform.log_jacobian(u)
            - 0.5 * prec.quad_form(flat)
        )
        return lp, g

    x = np.concatenate([transform.to_unconstrained(initial_params), initial_field.flatten()])
    current = logpost(x)
    if not np.isfinite(current[0]):
        raise NumericalError("non-finite posterior at the baseline initial state")

    theta_draws = np.zeros((n_thin, theta_dim))
    field_draws = np.zeros((n_thin, n_field))
    g_draws = np.zeros(n_thin)
    iter_record = np.zeros(n_thin, dtype=np.int64)
    n_recorded = 0

    t_start = time.perf_counter()
    for iteration in range(1, settings.iterations + 1):
        x, current, flags = sampler.step(x, logpost, current)
        if iteration <= settings.burnin:
            sampler.adapt(flags, x, iteration)
            if iteration == settings.burnin:
                sampler.adaptation.freeze()
        if iteration > settings.burnin and (iteration - settings.burnin) % settings.thinning == 0:
            params = transform.to_params(x[:theta_dim])
            theta_draws[n_recorded] = transform.constrained_vector(params)
            field_draws[n_recorded] = x[theta_dim:]
            g_draws[n_recorded] = current[1]
            iter_record[n_recorded] = iteration
            n_recorded += 1
    seconds = time.perf_counter() - t_start

    spec = prec.spec
    draws = DrawsStore(
        theta_names=list(transform.names),
        field_names=field_param_names(spec.n_knots, spec.n_strata),
        theta=theta_draws[:n_recorded],
        field=field_draws[:n_recorded],
        g=g_draws[:n_recorded],
        tau=None,
        iterations=iter_record[:n_recorded],
        meta={"sampler": "joint_random_walk"},
    )
    return ChainResult(
        draws=draws,
        acceptance={"joint": sampler.acceptance_rate},
        seconds=seconds,
        iterations=settings.iterations,
    )
