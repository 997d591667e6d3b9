"""Stratified SEIR epidemic inference with a GMRF transmission field."""

from .gmrf import (
    PrecisionSpec,
    SparsePrecision,
    StructureKind,
    TransmissionField,
    build_auxiliary_operator,
    build_precision,
    build_structure_matrix,
    conditional_forecast_distribution,
    log_prior_density,
    sample_field,
)
from .seir import (
    ContactPeriod,
    ContactSchedule,
    EpidemicTrajectory,
    PopulationStructure,
    StaticParams,
    initial_state,
    reproduction_number,
    simulate,
)
from .observation import (
    DelayDistribution,
    LikelihoodEvaluator,
    LogLikelihood,
    SurveillanceData,
    death_mean,
    log_likelihood,
    negbin_logpmf,
    sero_prob,
)
from .mcmc import (
    AdaptiveBlockSampler,
    AuxiliaryFieldSampler,
    ParamPrior,
    ThetaTransform,
    gibbs_tau,
)
from .engine import DrawsStore, EpidemicModel, McmcSettings, run_chain
from .forecast import ForecastDraws, ScoreReport, crps_sample, forecast, interval_score, score_forecasts
from .diagnostics import ess, split_rhat

__version__ = "0.1.0"
