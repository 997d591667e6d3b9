"""Samplers for the two-block posterior update.

Static parameters move through a randomised-block adaptive Metropolis step: a
fresh uniform random partition each iteration, per-block Gaussian proposals
from the learned covariance submatrix, and a single global scale tuned by
Robbins-Monro toward a 0.234 acceptance rate.

The latent field moves through an auxiliary-variable step: noise u is added
around the current field, the proposal is drawn from N((2/c^2) A^-1 u, A^-1)
with A = Q + (2/c^2) I, and acceptance depends on the log-likelihood
difference alone because the Gaussian prior factor cancels exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, NumericalError
from .gmrf import PrecisionShiftTemplate, SparsePrecision, build_auxiliary_operator
from .seir import StaticParams

TARGET_ACCEPT = 0.234
_ADAPT_DECAY = -0.6
_COV_JITTER = 1e-10


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class ParamPrior:
    """Prior for one parameter group, specified on the constrained scale.

    dist is one of "lognormal", "logitnormal" or "normal"; mu may be a scalar
    or a per-element vector.
    """

    dist: str
    mu: object
    sigma: float

    def __post_init__(self):
        if self.dist not in ("lognormal", "logitnormal", "normal"):
            raise ConfigError(f"unknown prior distribution {self.dist!r}")
        if float(self.sigma) <= 0.0:
            raise ConfigError("prior sigma must be positive")
        object.__setattr__(self, "_mu_arr", np.asarray(self.mu, dtype=np.float64))
        sig = float(self.sigma)
        object.__setattr__(self, "_norm", -np.log(sig) - 0.5 * np.log(2.0 * np.pi))

    def logpdf(self, value) -> float:
        x = np.asarray(value, dtype=np.float64).reshape(-1)
        mu = self._mu_arr
        sig = self.sigma
        if self.dist == "lognormal":
            lx = np.log(x)
            z = (lx - mu) / sig
            core = self._norm - 0.5 * z * z - lx
        elif self.dist == "logitnormal":
            z = (_logit(x) - mu) / sig
            core = self._norm - 0.5 * z * z - np.log(x) - np.log1p(-x)
        else:
            z = (x - mu) / sig
            core = self._norm - 0.5 * z * z
        return float(np.sum(core))


# Unconstrained transform used for each sampleable group; d_L stays fixed.
GROUP_TRANSFORMS = {
    "eta": "log",
    "d_I": "log",
    "k_sens": "logit",
    "k_spec": "logit",
    "p": "logit",
    "z": "log",
    "psi": "identity",
    "ell0": "identity",
}
SAMPLEABLE_GROUPS = tuple(GROUP_TRANSFORMS)


class ThetaTransform:
    """Bijection between sampled parameter groups and an unconstrained vector.

    Positive parameters go through log, probabilities through logit, and the
    initial-condition parameters stay identity. Groups not listed in
    ``sampled`` keep their values from the base parameter set.
    """

    def __init__(self, base: StaticParams, sampled):
        self.base = base
        sampled = tuple(sampled)
        unknown = [s for s in sampled if s not in GROUP_TRANSFORMS]
        if unknown:
            raise ConfigError(f"unknown parameter groups: {unknown}")
        self.sampled = sampled
        self._layout = []
        names = []
        offset = 0
        for group in sampled:
            value = getattr(base, group)
            if np.isscalar(value) or np.asarray(value).ndim == 0:
                size, shape = 1, None
                names.append(group)
            else:
                arr = np.asarray(value)
                size, shape = arr.size, arr.shape
                if arr.ndim == 1:
                    names.extend(f"{group}[{i}]" for i in range(size))
                else:
                    names.extend(
                        f"{group}[{i};{j}]" for i in range(shape[0]) for j in range(shape[1])
                    )
            self._layout.append((group, GROUP_TRANSFORMS[group], offset, size, shape))
            offset += size
        self.dim = offset
        self.names = names

    def to_unconstrained(self, params: StaticParams) -> np.ndarray:
        u = np.empty(self.dim)
        for group, kind, off, size, _ in self._layout:
            value = np.asarray(getattr(params, group), dtype=np.float64).reshape(-1)
            if kind == "log":
                u[off : off + size] = np.log(value)
            elif kind == "logit":
                u[off : off + size] = _logit(value)
            else:
                u[off : off + size] = value
        return u

    def to_params(self, u: np.ndarray) -> StaticParams:
        updates = {}
        for group, kind, off, size, shape in self._layout:
            seg = u[off : off + size]
            if kind == "log":
                value = np.exp(seg)
            elif kind == "logit":
                value = _sigmoid(seg)
            else:
                value = seg.copy()
            if shape is None:
                updates[group] = float(value[0])
            else:
                updates[group] = value.reshape(shape)
        return self._replace(updates)

    def constrained_vector(self, params: StaticParams) -> np.ndarray:
        out = np.empty(self.dim)
        for group, _, off, size, _ in self._layout:
            out[off : off + size] = np.asarray(getattr(params, group), dtype=np.float64).reshape(-1)
        return out

    def params_from_constrained(self, vec: np.ndarray) -> StaticParams:
        updates = {}
        for group, _, off, size, shape in self._layout:
            seg = np.asarray(vec[off : off + size], dtype=np.float64)
            updates[group] = float(seg[0]) if shape is None else seg.reshape(shape)
        return self._replace(updates)

    def _replace(self, updates) -> StaticParams:
        kwargs = {
            name: updates.get(name, getattr(self.base, name))
            for name in ("eta", "d_L", "d_I", "k_sens", "k_spec", "p", "z", "psi", "ell0")
        }
        return StaticParams(**kwargs)

    def log_jacobian(self, u: np.ndarray) -> float:
        """log |d theta / d u| of the bijection at u."""
        total = 0.0
        for _, kind, off, size, _ in self._layout:
            seg = u[off : off + size]
            if kind == "log":
                total += float(np.sum(seg))
            elif kind == "logit":
                total += float(np.sum(-_softplus(seg) - _softplus(-seg)))
        return total

    def prior_logpdf(self, params: StaticParams, priors) -> float:
        total = 0.0
        for group in self.sampled:
            if group not in priors:
                raise ConfigError(f"no prior configured for sampled group {group!r}")
            total += priors[group].logpdf(getattr(params, group))
        return total


@dataclass
class AdaptationState:
    """Running proposal moments and the global log-scale.

    The covariance accumulates Welford-style; everything freezes after
    burn-in so the post-burn-in chain is a fixed Markov kernel.
    """

    dim: int
    target_rate: float = TARGET_ACCEPT
    log_scale: float = 0.0
    count: int = 0
    frozen: bool = False
    mean: np.ndarray = dc_field(init=False)
    _m2: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        self.mean = np.zeros(self.dim)
        self._m2 = np.zeros((self.dim, self.dim))

    @property
    def covariance(self) -> np.ndarray | None:
        if self.count < 2:
            return None
        return self._m2 / (self.count - 1)

    def proposal_covariance(self) -> np.ndarray:
        """Scaled covariance; identity until 2*dim samples have accrued."""
        cov = self.covariance
        if cov is None or self.count < 2 * self.dim:
            cov = np.eye(self.dim)
        return np.exp(self.log_scale) * (cov + _COV_JITTER * np.eye(self.dim))

    def update(self, accepted_flags, u: np.ndarray, iteration: int) -> "AdaptationState":
        """One adaptation step; a no-op once frozen."""
        if self.frozen:
            return self
        flags = np.asarray(accepted_flags, dtype=np.float64)
        rate = float(flags.mean()) if flags.size else 0.0
        gamma = float(iteration) ** _ADAPT_DECAY
        self.log_scale += gamma * (rate - self.target_rate)
        self.count += 1
        delta = u - self.mean
        self.mean += delta / self.count
        self._m2 += np.outer(delta, u - self.mean)
        return self

    def freeze(self):
        self.frozen = True

    def state_dict(self) -> dict:
        return {
            "dim": self.dim,
            "target_rate": self.target_rate,
            "log_scale": self.log_scale,
            "count": self.count,
            "frozen": self.frozen,
            "mean": self.mean,
            "m2": self._m2,
        }

    @classmethod
    def from_state_dict(cls, d) -> "AdaptationState":
        out = cls(dim=int(d["dim"]), target_rate=float(d["target_rate"]))
        out.log_scale = float(d["log_scale"])
        out.count = int(d["count"])
        out.frozen = bool(d["frozen"])
        out.mean = np.array(d["mean"], dtype=np.float64)
        out._m2 = np.array(d["m2"], dtype=np.float64)
        return out


def random_partition(dim: int, n_blocks: int, rng) -> list[np.ndarray]:
    """Uniform random assignment of indices to at most n_blocks blocks.

    Blocks are disjoint, their union covers all indices, and empty blocks are
    dropped; a fresh partition is drawn every iteration.
    """
    if dim < 1:
        raise ValueError("nothing to partition")
    labels = rng.integers(0, n_blocks, size=dim)
    return [np.flatnonzero(labels == j) for j in range(n_blocks) if np.any(labels == j)]


class AdaptiveBlockSampler:
    """Randomised-block adaptive Metropolis with global scale tuning.

    ``logpost_fn(u)`` must return ``(log_posterior, aux)`` where aux is
    carried alongside the chain (the cached log-likelihood). With
    ``n_blocks=1`` this is plain full-vector adaptive Metropolis.
    """

    def __init__(self, dim: int, n_blocks: int, rng, target_rate: float = TARGET_ACCEPT):
        if dim < 1:
            raise ConfigError("sampler dimension must be positive")
        self.dim = dim
        self.n_blocks = max(1, min(n_blocks, dim))
        self.rng = rng
        self.adaptation = AdaptationState(dim=dim, target_rate=target_rate)
        self.adaptation.log_scale = float(np.log(2.38**2 / dim))
        self.proposals = 0
        self.accepts = 0
        self.rejects_nonfinite = 0

    def step(self, u: np.ndarray, logpost_fn, current: tuple):
        """One sweep over a fresh random partition; returns (u, current, flags)."""
        lp_cur, aux_cur = current
        cov = self.adaptation.proposal_covariance()
        blocks = random_partition(self.dim, self.n_blocks, self.rng)
        flags = []
        for idx in blocks:
            sub = cov[np.ix_(idx, idx)]
            chol = np.linalg.cholesky(sub)
            proposal = u.copy()
            proposal[idx] = proposal[idx] + chol @ self.rng.standard_normal(idx.size)
            self.proposals += 1
            try:
                lp_new, aux_new = logpost_fn(proposal)
            except NumericalError:
                self.rejects_nonfinite += 1
                flags.append(False)
                continue
            if not np.isfinite(lp_new):
                self.rejects_nonfinite += 1
                flags.append(False)
                continue
            if np.log(self.rng.uniform()) < lp_new - lp_cur:
                u = proposal
                lp_cur, aux_cur = lp_new, aux_new
                self.accepts += 1
                flags.append(True)
            else:
                flags.append(False)
        return u, (lp_cur, aux_cur), np.array(flags, dtype=bool)

    def adapt(self, accepted_flags, u: np.ndarray, iteration: int):
        self.adaptation.update(accepted_flags, u, iteration)

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.proposals if self.proposals else 0.0


class AuxiliaryFieldSampler:
    """Auxiliary-variable update for the latent field given the static block.

    The factored operator A = Q + (2/c^2) I is cached and rebuilt only when
    Q or c changes. Acceptance takes only log-likelihood values; there is no
    prior-density input anywhere in the accept computation.
    """

    def __init__(self, prec: SparsePrecision, c: float, rng, target_rate: float = TARGET_ACCEPT):
        if c <= 0.0:
            raise ConfigError("noise scale c must be positive")
        self.prec = prec
        self.log_c = float(np.log(c))
        self.rng = rng
        self.target_rate = target_rate
        self.frozen = False
        self.proposals = 0
        self.accepts = 0
        self._operator = None
        self._template = PrecisionShiftTemplate(prec.unit_matrix)

    @property
    def c(self) -> float:
        return float(np.exp(self.log_c))

    @property
    def operator(self):
        if self._operator is None or self._operator.c != self.c:
            self._operator = build_auxiliary_operator(self.prec, self.c, template=self._template)
        return self._operator

    def set_precision(self, prec: SparsePrecision):
        if prec.unit_matrix is not self._template.unit_matrix:
            self._template = PrecisionShiftTemplate(prec.unit_matrix)
        self.prec = prec
        self._operator = None

    def step(self, flat: np.ndarray, g_fn, g_cur: float):
        """One update; returns (flat, g, accepted)."""
        op = self.operator
        c = self.c
        u = flat + self.rng.standard_normal(flat.size) * (c / np.sqrt(2.0))
        mean = op.solve(op.shift * u)
        proposal = op.sample(mean, self.rng)
        self.proposals += 1
        try:
            g_new = g_fn(proposal)
        except NumericalError:
            return flat, g_cur, False
        if not np.isfinite(g_new):
            return flat, g_cur, False
        if np.log(self.rng.uniform()) < g_new - g_cur:
            self.accepts += 1
            return proposal, g_new, True
        return flat, g_cur, False

    def adapt(self, accepted: bool, iteration: int):
        """Robbins-Monro on log c toward the target acceptance rate."""
        if self.frozen:
            return
        gamma = float(iteration) ** _ADAPT_DECAY
        self.log_c += gamma * (float(accepted) - self.target_rate)

    def freeze(self):
        self.frozen = True

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.proposals if self.proposals else 0.0


def gibbs_tau(
    flat: np.ndarray,
    prec: SparsePrecision,
    prior_shape: float,
    prior_rate: float,
    rng,
) -> tuple[float, SparsePrecision]:
    """Conjugate draw of the overall precision scale.

    tau | field ~ Gamma(a + rank/2, b + quad/2) with quad the tau-free
    quadratic form; returns the draw and the rescaled precision.
    """
    quad_unit = prec.unit_quad_form(flat)
    if quad_unit < -1e-9:
        raise NumericalError("negative quadratic form in the tau update")
    quad_unit = max(quad_unit, 0.0)
    shape = prior_shape + 0.5 * prec.rank
    rate = prior_rate + 0.5 * quad_unit
    new_tau = float(rng.gamma(shape, 1.0 / rate))
    return new_tau, prec.with_tau(new_tau)
