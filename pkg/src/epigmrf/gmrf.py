"""Gaussian Markov random field prior for the log-transmission field.

The field lives on a (knots x strata) lattice. Its joint precision is the
Kronecker combination

    Q = tau * (rho_m * P_M (x) I_K + rho_time * I_M (x) P_K)

with P_M, P_K either a first-order random-walk structure (tridiagonal, zero
row sums) or the identity. Vectors are flattened stratum-major: the block for
stratum m is its full time series, so flat index = m * n_knots + k.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConfigError, NumericalError
from .sparsechol import SparseCholesky

# Numeric rank is computed by dense eigendecomposition up to this order;
# beyond it the rank follows from the structure kinds alone.
_RANK_DENSE_CUTOFF = 256
_RANK_EIG_RTOL = 1e-10

# exp() guard for log-transmission values; monotone and continuous.
FIELD_CAP = 50.0


class StructureKind(str, Enum):
    """Coupling structure along one lattice axis."""

    RW1_TRIDIAGONAL = "tridiagonal"
    IDENTITY = "identity"


def build_structure_matrix(kind: StructureKind, n: int) -> sp.csc_matrix:
    """Structure matrix of order n for one lattice axis.

    The random-walk kind equals D^T D for the (n-1) x n first-difference
    matrix D: tridiagonal, zero row sums. The identity kind is I_n.
    """
    kind = StructureKind(kind)
    if kind is StructureKind.IDENTITY:
        if n < 1:
            raise ConfigError("identity structure needs order >= 1")
        return sp.identity(n, format="csc")
    if n < 2:
        raise ConfigError("random-walk structure is degenerate below order 2")
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csc")


@dataclass(frozen=True)
class PrecisionSpec:
    """Hyperparameters and shape of the lattice precision."""

    tau: float
    rho_m: float
    rho_time: float
    p_m_kind: StructureKind
    p_k_kind: StructureKind
    n_strata: int
    n_knots: int
    delta_beta: float

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConfigError("tau must be positive")
        if self.rho_m < 0.0 or self.rho_time < 0.0:
            raise ConfigError("coupling weights must be nonnegative")
        if self.n_strata < 1:
            raise ConfigError("need at least one stratum")
        min_knots = 2 if StructureKind(self.p_k_kind) is StructureKind.RW1_TRIDIAGONAL else 1
        if self.n_knots < min_knots:
            raise ConfigError("too few knots for the temporal structure")
        if self.delta_beta <= 0.0:
            raise ConfigError("delta_beta must be positive")

    @property
    def order(self) -> int:
        return self.n_strata * self.n_knots


@dataclass(frozen=True)
class TransmissionField:
    """Lattice of log-transmission values; rows are knots, columns strata."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2:
            raise ValueError("field values must be a (knots, strata) matrix")
        object.__setattr__(self, "values", v)

    @property
    def n_knots(self) -> int:
        return self.values.shape[0]

    @property
    def n_strata(self) -> int:
        return self.values.shape[1]

    def flatten(self) -> np.ndarray:
        """Stratum-major vector: block m holds the time series of stratum m."""
        return self.values.T.reshape(-1).copy()

    @classmethod
    def from_flat(cls, flat, n_knots: int, n_strata: int) -> "TransmissionField":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != n_knots * n_strata:
            raise ValueError("flat vector length does not match the lattice")
        return cls(flat.reshape(n_strata, n_knots).T)

    @staticmethod
    def flat_index(knot: int, stratum: int, n_knots: int) -> int:
        return stratum * n_knots + knot


def _as_fraction(x: float) -> Fraction:
    return Fraction(x).limit_denominator(1_000_000)


def n_knots_for_days(days: int, delta_beta: float) -> int:
    """Number of knots covering a horizon of whole days: ceil(days/delta_beta)."""
    r = Fraction(days) / _as_fraction(delta_beta)
    return int(-(-r.numerator // r.denominator))


def step_knot_indices(n_steps: int, delta: float, delta_beta: float) -> np.ndarray:
    """0-based knot row used by each ODE step k=1..n_steps.

    Step k covers (t_{k-1}, t_k] with t_k = k*delta and reads knot
    ceil(k*delta/delta_beta); the field is piecewise constant between knots.
    """
    d = _as_fraction(delta)
    db = _as_fraction(delta_beta)
    idx = np.empty(n_steps, dtype=np.int64)
    for k in range(1, n_steps + 1):
        r = k * d / db
        idx[k - 1] = -(-r.numerator // r.denominator) - 1
    return idx


def _analytic_nullity(spec: PrecisionSpec) -> int:
    null_m = 1 if StructureKind(spec.p_m_kind) is StructureKind.RW1_TRIDIAGONAL else 0
    null_k = 1 if StructureKind(spec.p_k_kind) is StructureKind.RW1_TRIDIAGONAL else 0
    strata_active = spec.rho_m > 0.0
    time_active = spec.rho_time > 0.0
    if strata_active and time_active:
        return null_m * null_k
    if time_active:
        return spec.n_strata * null_k
    if strata_active:
        return null_m * spec.n_knots
    return spec.order


def numeric_rank(matrix: sp.spmatrix) -> int:
    """Rank by dense eigenvalue threshold (relative tolerance 1e-10)."""
    w = scipy.linalg.eigvalsh(matrix.toarray())
    lam_max = float(w[-1]) if w.size else 0.0
    if lam_max <= 0.0:
        return 0
    return int(np.sum(w > _RANK_EIG_RTOL * lam_max))


@dataclass(frozen=True)
class SparsePrecision:
    """Assembled sparse precision (including tau) with its cached rank.

    The tau-free unit structure is kept alongside so rescaling to a new tau
    is path-independent (a chain of rescalings gives the exact same matrix
    as a single one).
    """

    matrix: sp.csc_matrix
    tau: float
    rank: int
    spec: PrecisionSpec | None = None
    unit_matrix: sp.csc_matrix | None = None

    def __post_init__(self):
        if self.unit_matrix is None:
            object.__setattr__(self, "unit_matrix", (self.matrix / self.tau).tocsc())

    @property
    def order(self) -> int:
        return self.matrix.shape[0]

    def quad_form(self, flat: np.ndarray) -> float:
        return float(flat @ (self.matrix @ flat))

    def unit_quad_form(self, flat: np.ndarray) -> float:
        """Quadratic form under the tau-free structure."""
        return float(flat @ (self.unit_matrix @ flat))

    def with_tau(self, new_tau: float) -> "SparsePrecision":
        """Rescale to a new overall precision; structure and rank are unchanged."""
        if new_tau <= 0.0:
            raise ConfigError("tau must be positive")
        scaled = (new_tau * self.unit_matrix).tocsc()
        new_spec = replace(self.spec, tau=new_tau) if self.spec is not None else None
        return SparsePrecision(
            matrix=scaled, tau=new_tau, rank=self.rank, spec=new_spec, unit_matrix=self.unit_matrix
        )


def build_precision(spec: PrecisionSpec) -> SparsePrecision:
    """Assemble Q = tau (rho_m P_M (x) I_K + rho_time I_M (x) P_K), stratum-major."""
    p_m = build_structure_matrix(spec.p_m_kind, spec.n_strata)
    p_k = build_structure_matrix(spec.p_k_kind, spec.n_knots)
    i_m = sp.identity(spec.n_strata, format="csc")
    i_k = sp.identity(spec.n_knots, format="csc")
    unit = (
        spec.rho_m * sp.kron(p_m, i_k, format="csc")
        + spec.rho_time * sp.kron(i_m, p_k, format="csc")
    ).tocsc()
    q = (spec.tau * unit).tocsc()
    if spec.order <= _RANK_DENSE_CUTOFF:
        rank = numeric_rank(q)
    else:
        rank = spec.order - _analytic_nullity(spec)
    return SparsePrecision(matrix=q, tau=spec.tau, rank=rank, spec=spec, unit_matrix=unit)


def log_prior_density(
    field: TransmissionField, prec: SparsePrecision, paper_exponent: bool = False
) -> float:
    """Improper lattice prior log-density up to an additive constant.

    The default normalisation exponent is +rank/2 on tau (the rank of the
    tau-free structure), which is what a conjugate tau update requires. The
    ``paper_exponent`` flag switches to -order/2 for literal comparison with
    the alternative convention.
    """
    flat = field.flatten()
    if flat.size != prec.order:
        raise ValueError("field size does not match the precision order")
    quad = prec.quad_form(flat)
    if paper_exponent:
        exponent = -0.5 * prec.order
    else:
        exponent = 0.5 * prec.rank
    return exponent * float(np.log(prec.tau)) - 0.5 * quad


def sample_field(spec: PrecisionSpec, rng, ridge: float | None = None, size: int | None = None):
    """Draw from N(0, (Q + ridge I)^-1) on the lattice.

    The ridge (default 1e-6 * tau) makes the intrinsic precision invertible;
    used for synthetic data generation only. Returns one TransmissionField,
    or with ``size`` an (size, order) array of flattened draws sharing one
    factorisation.
    """
    if ridge is None:
        ridge = 1e-6 * spec.tau
    if ridge <= 0.0:
        raise ConfigError("ridge must be positive")
    prec = build_precision(spec)
    shifted = (prec.matrix + ridge * sp.identity(prec.order, format="csc")).tocsc()
    factor = SparseCholesky(shifted)
    if size is not None:
        return factor.sample(None, rng, size=size)
    flat = factor.sample(None, rng)
    return TransmissionField.from_flat(flat, spec.n_knots, spec.n_strata)


class PrecisionShiftTemplate:
    """Fixed-pattern assembly of tau * Q_unit + shift * I.

    Factorising A = Q + (2/c^2) I happens every iteration whenever tau or c
    moves, so the assembly is reduced to one fused vector operation over a
    precomputed csc pattern instead of repeated sparse additions.
    """

    def __init__(self, unit_matrix: sp.csc_matrix):
        n = unit_matrix.shape[0]
        unit = unit_matrix.tocsc().copy()
        unit.sort_indices()
        ones_unit = unit.copy()
        ones_unit.data = np.ones_like(ones_unit.data)
        pattern = (ones_unit + sp.identity(n, format="csc")).tocsc()
        pattern.sort_indices()

        def positions(matrix):
            cols = np.repeat(np.arange(n), np.diff(matrix.indptr))
            keys = cols * n + matrix.indices
            return keys

        pat_keys = positions(pattern)
        unit_pos = np.searchsorted(pat_keys, positions(unit))
        if not np.array_equal(pat_keys[unit_pos], positions(unit)):
            raise NumericalError("sparsity patterns failed to align")
        diag_pos = np.searchsorted(pat_keys, np.arange(n) * n + np.arange(n))
        unit_data = np.zeros(pattern.nnz)
        unit_data[unit_pos] = unit.data
        eye_data = np.zeros(pattern.nnz)
        eye_data[diag_pos] = 1.0
        self.unit_matrix = unit_matrix
        self._indptr = pattern.indptr
        self._indices = pattern.indices
        self._unit_data = unit_data
        self._eye_data = eye_data
        self._shape = pattern.shape

    def assemble(self, tau: float, shift: float) -> sp.csc_matrix:
        data = tau * self._unit_data + shift * self._eye_data
        return sp.csc_matrix((data, self._indices, self._indptr), shape=self._shape)


class AuxiliaryOperator:
    """Factored A = Q + (2/c^2) I, reusable while (Q, c) are unchanged.

    A is positive definite for any c > 0 even when Q is singular, so the
    factorisation always exists. Supports solve(v) and sampling N(mean, A^-1).
    """

    def __init__(self, prec: SparsePrecision, c: float, template: PrecisionShiftTemplate | None = None):
        if c <= 0.0:
            raise ConfigError("noise scale c must be positive")
        self.c = float(c)
        self.shift = 2.0 / (c * c)
        if template is not None and template.unit_matrix is prec.unit_matrix:
            self.matrix = template.assemble(prec.tau, self.shift)
        else:
            self.matrix = (
                prec.matrix + self.shift * sp.identity(prec.order, format="csc")
            ).tocsc()
        self._factor = SparseCholesky(self.matrix)

    @property
    def order(self) -> int:
        return self.matrix.shape[0]

    def solve(self, v: np.ndarray) -> np.ndarray:
        return self._factor.solve(v)

    def sample(self, mean, rng, size: int | None = None) -> np.ndarray:
        return self._factor.sample(mean, rng, size=size)


def build_auxiliary_operator(
    prec: SparsePrecision, c: float, template: PrecisionShiftTemplate | None = None
) -> AuxiliaryOperator:
    return AuxiliaryOperator(prec, c, template=template)


class ForecastConditional:
    """Gaussian conditional of future knots given the observed block.

    Mean vector is stratum-major over the future lattice; samples come back
    as (future_knots, strata) blocks ready to stack under the observed field.
    """

    def __init__(self, mean: np.ndarray, factor: SparseCholesky, n_future_knots: int, n_strata: int):
        self.mean = mean
        self.n_future_knots = n_future_knots
        self.n_strata = n_strata
        self._factor = factor

    def _to_block(self, flat: np.ndarray) -> np.ndarray:
        return flat.reshape(self.n_strata, self.n_future_knots).T

    @property
    def mean_block(self) -> np.ndarray:
        return self._to_block(self.mean)

    def sample(self, rng, size: int | None = None) -> np.ndarray:
        if size is None:
            return self._to_block(self._factor.sample(self.mean, rng))
        flat = self._factor.sample(self.mean, rng, size=size)
        return flat.reshape(size, self.n_strata, self.n_future_knots).transpose(0, 2, 1)


def conditional_forecast_distribution(
    prec_ext: SparsePrecision, observed: TransmissionField
) -> ForecastConditional:
    """Condition an extended-lattice precision on its leading time block.

    ``prec_ext`` must be built on the same strata with extra trailing knots;
    the observed field occupies the first knots of every stratum. Returns the
    conditional with precision Q_FF and mean -Q_FF^-1 Q_FP beta_past.
    """
    n_strata = observed.n_strata
    if prec_ext.order % n_strata != 0:
        raise ValueError("extended precision order is not a multiple of the strata count")
    if prec_ext.spec is not None and prec_ext.spec.n_strata != n_strata:
        raise ValueError("strata count mismatch between field and extended precision")
    total_knots = prec_ext.order // n_strata
    past_knots = observed.n_knots
    future_knots = total_knots - past_knots
    if future_knots <= 0:
        raise ValueError("extended precision has no future block")
    base = np.arange(n_strata)[:, None] * total_knots
    past = (base + np.arange(past_knots)[None, :]).ravel()
    future = (base + np.arange(past_knots, total_knots)[None, :]).ravel()
    q = prec_ext.matrix
    q_ff = q[future, :][:, future].tocsc()
    q_fp = q[future, :][:, past].tocsc()
    factor = SparseCholesky(q_ff)
    mean = -factor.solve(q_fp @ observed.flatten())
    return ForecastConditional(mean, factor, future_knots, n_strata)
