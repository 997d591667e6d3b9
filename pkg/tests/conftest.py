import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile(
    "suite", max_examples=60, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def tiny_model_setup(seed=101, data_scale=1.0):
    """Single-region single-age fixture: 10 days of data, 5 field knots,
    two sampled static parameters (dispersion and the one fatality ratio).

    Returns a dict with the model, truth, data and everything needed to
    evaluate the joint posterior independently of the samplers.
    """
    from epigmrf.engine import EpidemicModel
    from epigmrf.gmrf import (
        PrecisionSpec,
        StructureKind,
        TransmissionField,
        build_precision,
    )
    from epigmrf.mcmc import ParamPrior, ThetaTransform
    from epigmrf.observation import (
        DelayDistribution,
        LikelihoodEvaluator,
        SurveillanceData,
        convolve_death_mean,
    )
    from epigmrf.seir import ContactPeriod, ContactSchedule, PopulationStructure, StaticParams, simulate

    rng = np.random.default_rng(seed)
    n_days, delta, delta_beta = 10, 0.5, 2.0
    pop = PopulationStructure(np.array([[5e4 * data_scale]]))
    truth = StaticParams(
        eta=0.3,
        d_L=2.0,
        d_I=3.0,
        k_sens=0.9,
        k_spec=0.95,
        p=np.array([0.05]),
        z=np.ones((1, 3)),
        psi=np.array([0.2]),
        ell0=np.array([np.log(40.0 * data_scale)]),
    )
    schedule = ContactSchedule((ContactPeriod(1, np.full((1, 1, 1), 2.0), 0),))
    delay = DelayDistribution.from_cdf(
        np.minimum((np.arange(9) / 4.0) ** 1.5, 1.0)
    )
    pspec = PrecisionSpec(
        tau=8.0,
        rho_m=0.0,
        rho_time=1.5,
        p_m_kind=StructureKind.IDENTITY,
        p_k_kind=StructureKind.RW1_TRIDIAGONAL,
        n_strata=1,
        n_knots=5,
        delta_beta=delta_beta,
    )
    precision = build_precision(pspec)
    steps = rng.standard_normal(4) / np.sqrt(8.0 * 1.5)
    field_true = TransmissionField(
        (-1.1 + np.concatenate([[0.0], np.cumsum(steps)]))[:, None]
    )
    traj = simulate(truth, field_true, schedule, pop, n_days * 2, delta, delta_beta)
    mu = convolve_death_mean(traj.daily_new_infections(), delay, truth.p)
    deaths = np.zeros_like(mu, dtype=np.int64)
    mask = mu > 0
    deaths[mask] = rng.negative_binomial(mu[mask] / truth.eta, 1.0 / (1.0 + truth.eta))
    sero_n = np.zeros_like(deaths)
    sero_n[:, 3::4, :] = 300
    s_day = traj.susceptible_at_day_ends()
    frac = 1.0 - s_day / pop.counts[:, None, :]
    prob = truth.k_sens * frac + (1 - truth.k_spec) * (1 - frac)
    sero_y = np.zeros_like(deaths)
    m = sero_n > 0
    sero_y[m] = rng.binomial(sero_n[m], prob[m])
    data = SurveillanceData(deaths, sero_y, sero_n, steps_per_day=2)

    evaluator = LikelihoodEvaluator(data, pop, schedule, delay, delta, delta_beta)
    transform = ThetaTransform(truth, ("eta", "p"))
    priors = {
        "eta": ParamPrior("lognormal", float(np.log(0.3)), 0.5),
        "p": ParamPrior("logitnormal", float(np.log(0.05 / 0.95)), 0.5),
    }
    model = EpidemicModel(
        evaluator=evaluator, transform=transform, priors=priors, precision=precision
    )
    return {
        "model": model,
        "truth": truth,
        "field_true": field_true,
        "precision": precision,
        "pspec": pspec,
        "data": data,
        "pop": pop,
        "schedule": schedule,
        "delay": delay,
        "delta": delta,
        "n_days": n_days,
    }
