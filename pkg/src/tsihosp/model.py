"""Core types and deterministic recursions for the joint incidence/hospitalization model.

New infections on day t are Poisson with mean R_t * Lambda_t, where Lambda_t
convolves past incidence with a discrete infectiousness distribution and R_t
follows a log-link autoregression on exogenous covariates.  Each infection is
admitted to hospital s days later (or never) according to a delay propensity
distribution.  This module holds the immutable value types, the deterministic
recursions, the simplex/positivity reparameterization used by the optimizer,
and the Gamma-discretization helper that builds delay distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

SIMPLEX_TOL = 1e-12
AR_COEF_BOX = 0.99


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class InfectiousnessFunction:
    """Discrete transmission-weight distribution over days since infection.

    ``weights[i]`` is the probability of transmitting i+1 days after
    infection (day-0 weight is implicitly zero); the support length is
    ``eta = len(weights)``.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights, float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("infectiousness weights must be a non-empty 1-d vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("infectiousness weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"infectiousness weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "weights", w)

    @property
    def eta(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class HospitalizationPropensity:
    """Admission-delay distribution: ``weights[s]`` is the probability of
    hospital admission s days after infection (s = 0..eta_tilde) and
    ``never`` the probability of no admission at all.
    """

    never: float
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights, float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("propensity weights must be a non-empty 1-d vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or self.never < 0:
            raise ValueError("propensity entries must be finite and non-negative")
        if abs(self.never + w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(
                f"propensity entries sum to {self.never + w.sum()!r}, expected 1"
            )
        object.__setattr__(self, "weights", w)

    @property
    def eta_tilde(self) -> int:
        return self.weights.size - 1

    def full_simplex(self) -> np.ndarray:
        """Concatenated (never, w_0, ..., w_eta_tilde) probability vector."""
        return np.concatenate([[self.never], self.weights])


@dataclass(frozen=True)
class RegressionSpec:
    """Shape of the log-link autoregression for R_t.

    Only the log link is supported; ``ar_order`` may be 1 or 2 and
    ``covariate_dim`` counts the exogenous columns.
    """

    ar_order: int = 1
    covariate_dim: int = 0
    link: str = "log"

    def __post_init__(self):
        if self.link != "log":
            raise ValueError("only the log link is supported")
        if self.ar_order not in (1, 2):
            raise ValueError("ar_order must be 1 or 2")
        if self.covariate_dim < 0:
            raise ValueError("covariate_dim must be >= 0")


@dataclass(frozen=True)
class RegressionParams:
    """Coefficients of log(R_t) = Z_t beta + theta0 + sum_j theta_j log(R_{t-j})."""

    beta: np.ndarray
    theta0: float
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen_array(self.beta, float))
        object.__setattr__(self, "theta", _frozen_array(self.theta, float))
        if not np.all(np.isfinite(self.beta)) or not math.isfinite(self.theta0):
            raise ValueError("regression coefficients must be finite")
        if self.theta.size < 1:
            raise ValueError("at least one autoregressive coefficient is required")
        if np.any(np.abs(self.theta) >= 1.0):
            raise ValueError("autoregressive coefficients must satisfy |theta_j| < 1")

    @property
    def ar_order(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: regression coefficients, infectiousness weights,
    admission propensity, and the initial reproduction number R_0."""

    regression: RegressionParams
    omega: InfectiousnessFunction
    omega_tilde: HospitalizationPropensity
    r_init: float

    def __post_init__(self):
        if not (math.isfinite(self.r_init) and self.r_init > 0):
            raise ValueError("r_init must be a positive real")


@dataclass(frozen=True)
class EpidemicSeries:
    """Aligned daily counts and covariates for days 0..T.

    ``covariates`` is day-indexed with T+1 rows; the day-0 row is carried for
    alignment only (the regression reads rows 1..T).
    """

    incidence: np.ndarray
    hospitalizations: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        inc = _frozen_array(self.incidence, np.int64)
        hosp = _frozen_array(self.hospitalizations, np.int64)
        cov = _frozen_array(
            self.covariates if self.covariates is not None else np.zeros((inc.size, 0)),
            float,
        )
        if inc.ndim != 1 or hosp.ndim != 1 or cov.ndim != 2:
            raise ValueError("incidence/hospitalizations must be 1-d, covariates 2-d")
        if not (inc.size == hosp.size == cov.shape[0]):
            raise ValueError("incidence, hospitalizations and covariates must share length T+1")
        if np.any(inc < 0) or np.any(hosp < 0):
            raise ValueError("counts must be non-negative")
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariates must be finite")
        object.__setattr__(self, "incidence", inc)
        object.__setattr__(self, "hospitalizations", hosp)
        object.__setattr__(self, "covariates", cov)

    @property
    def horizon(self) -> int:
        """Last day index T (series covers days 0..T)."""
        return self.incidence.size - 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.incidence.size)


@dataclass(frozen=True)
class LatentAdmissions:
    """Infection-to-admission split counts h[t, s].

    ``counts[t, 0]`` holds the never-admitted of day t; ``counts[t, 1 + s]``
    holds infections of day t admitted s days later, s = 0..eta_tilde.
    Admissions landing after the study window stay in their row, so row sums
    always reproduce the day's incidence.
    """

    counts: np.ndarray

    def __post_init__(self):
        c = _frozen_array(self.counts, np.int64)
        if c.ndim != 2 or c.shape[1] < 2:
            raise ValueError("latent counts must be (T+1) x (eta_tilde + 2)")
        if np.any(c < 0):
            raise ValueError("latent counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def eta_tilde(self) -> int:
        return self.counts.shape[1] - 2

    def row_sums(self) -> np.ndarray:
        """Total infections per day implied by the split (first Eq.-style identity)."""
        return self.counts.sum(axis=1)

    def admissions_by_day(self) -> np.ndarray:
        """Daily admissions assembled from the anti-diagonals h[t-s, s]."""
        n_days = self.counts.shape[0]
        admitted = np.zeros(n_days, dtype=np.int64)
        for s in range(self.eta_tilde + 1):
            admitted[s:] += self.counts[: n_days - s, 1 + s]
        return admitted


def infection_potential(omega: InfectiousnessFunction, incidence, t: int) -> float:
    """Infection potential Lambda_t = sum_s omega_s * I_{t-s}, truncated at
    the available history (s = 1..min(t, eta)).

    ``incidence`` must contain at least I_0..I_{t-1}; day 0 has no modeled
    potential and is rejected.
    """
    if t < 1:
        raise ValueError("the infection potential is undefined for t < 1")
    incidence = np.asarray(incidence, dtype=float)
    if incidence.size < t:
        raise ValueError(f"need at least {t} incidence entries, got {incidence.size}")
    depth = min(t, omega.eta)
    lags = incidence[t - depth : t][::-1]  # I_{t-1}, ..., I_{t-depth}
    return float(np.dot(omega.weights[:depth], lags))


def infection_potential_series(omega: InfectiousnessFunction, incidence) -> np.ndarray:
    """Vector of Lambda_t for t = 0..T; the day-0 entry is 0 by convention."""
    incidence = np.asarray(incidence, dtype=float)
    kernel = np.concatenate([[0.0], omega.weights])
    lam = np.convolve(incidence, kernel)[: incidence.size]
    lam[0] = 0.0
    return lam


def rt_trajectory(
    params: ModelParams, spec: RegressionSpec, covariates, horizon: int
) -> np.ndarray:
    """Deterministic reproduction-number path R_1..R_T from the log-AR recursion.

    ``covariates`` is day-indexed with at least ``horizon + 1`` rows (row t is
    used for day t; row 0 is ignored).  Days 0..ar_order-1 are pinned at
    ``params.r_init``; later days follow
    log(R_t) = Z_t beta + theta0 + sum_j theta_j log(R_{t-j}).
    """
    log_r = log_rt_trajectory(params.regression, params.r_init, spec, covariates, horizon)
    return np.exp(log_r[1:])


def log_rt_trajectory(
    reg: RegressionParams, r_init: float, spec: RegressionSpec, covariates, horizon: int
) -> np.ndarray:
    """log R_t for t = 0..T (the workhorse behind :func:`rt_trajectory`)."""
    if reg.ar_order != spec.ar_order:
        raise ValueError("params and spec disagree on the AR order")
    z = np.asarray(covariates, dtype=float)
    if z.ndim != 2 or z.shape[1] != spec.covariate_dim:
        raise ValueError("covariate matrix has the wrong number of columns")
    if z.shape[0] < horizon + 1:
        raise ValueError("covariate rows must cover days 0..T")
    if not np.all(np.isfinite(z[1 : horizon + 1])):
        raise ValueError("non-finite covariate values")
    q = spec.ar_order
    log_r = np.empty(horizon + 1)
    log_r[: min(q, horizon + 1)] = math.log(r_init)
    drive = z[1 : horizon + 1] @ reg.beta + reg.theta0
    for t in range(q, horizon + 1):
        acc = drive[t - 1]
        for j in range(1, q + 1):
            acc += reg.theta[j - 1] * log_r[t - j]
        log_r[t] = acc
    return log_r


# ---------------------------------------------------------------------------
# Unconstrained reparameterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamLayout:
    """Slices of the unconstrained coordinate vector.

    Layout: beta | theta0 | theta (tanh-boxed) | log r_init |
    omega logits (last weight anchored at 0) |
    propensity logits over (never, w_0..w_eta_tilde) with the last anchored.
    """

    beta: slice
    theta0: slice
    theta: slice
    r_init: slice
    omega: slice
    omega_tilde: slice
    size: int = field(default=0)

    @staticmethod
    def for_dims(spec: RegressionSpec, eta: int, eta_tilde: int) -> "ParamLayout":
        k, q = spec.covariate_dim, spec.ar_order
        cuts = np.cumsum([0, k, 1, q, 1, eta - 1, eta_tilde + 1])
        slices = [slice(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:])]
        return ParamLayout(*slices, size=int(cuts[-1]))


def simplex_to_logits(weights: np.ndarray) -> np.ndarray:
    """Log-ratio coordinates of a strictly positive probability vector,
    anchoring the last entry at 0 (the reference category)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("simplex reparameterization requires strictly positive weights")
    return np.log(w[:-1]) - math.log(w[-1])


def logits_to_simplex(logits: np.ndarray) -> np.ndarray:
    v = np.concatenate([np.asarray(logits, dtype=float), [0.0]])
    v = v - v.max()
    e = np.exp(v)
    return e / e.sum()


def propensity_stack(omega_tilde: HospitalizationPropensity) -> np.ndarray:
    """Propensity probabilities ordered (w_0, .., w_eta_tilde, never): the
    never-admitted share is the reference category of the logit map, being
    the structurally largest and most stable coordinate."""
    return np.concatenate([omega_tilde.weights, [omega_tilde.never]])


def params_to_unconstrained(params: ModelParams, spec: RegressionSpec) -> np.ndarray:
    """Map a valid parameter set to unconstrained optimizer coordinates."""
    reg = params.regression
    if reg.beta.size != spec.covariate_dim or reg.ar_order != spec.ar_order:
        raise ValueError("params dimensions do not match the regression spec")
    if np.any(np.abs(reg.theta) >= AR_COEF_BOX):
        raise ValueError(f"autoregressive coefficients must lie in (-{AR_COEF_BOX}, {AR_COEF_BOX})")
    return np.concatenate(
        [
            reg.beta,
            [reg.theta0],
            np.arctanh(reg.theta / AR_COEF_BOX),
            [math.log(params.r_init)],
            simplex_to_logits(params.omega.weights),
            simplex_to_logits(propensity_stack(params.omega_tilde)),
        ]
    )


def params_from_unconstrained(
    x: np.ndarray, spec: RegressionSpec, eta: int, eta_tilde: int
) -> ModelParams:
    """Inverse of :func:`params_to_unconstrained`."""
    x = np.asarray(x, dtype=float)
    layout = ParamLayout.for_dims(spec, eta, eta_tilde)
    if x.shape != (layout.size,):
        raise ValueError(
            f"expected {layout.size} unconstrained coordinates for "
            f"(covariate_dim={spec.covariate_dim}, ar_order={spec.ar_order}, "
            f"eta={eta}, eta_tilde={eta_tilde}); got {x.shape}"
        )
    stack = logits_to_simplex(x[layout.omega_tilde])
    return ModelParams(
        regression=RegressionParams(
            beta=x[layout.beta],
            theta0=float(x[layout.theta0][0]),
            theta=AR_COEF_BOX * np.tanh(x[layout.theta]),
        ),
        omega=InfectiousnessFunction(logits_to_simplex(x[layout.omega])),
        omega_tilde=HospitalizationPropensity(never=float(stack[-1]), weights=stack[:-1]),
        r_init=float(math.exp(x[layout.r_init][0])),
    )


def param_names(spec: RegressionSpec, eta: int, eta_tilde: int) -> list:
    """Flat natural-scale parameter names, aligned with :func:`param_values`."""
    names = [f"beta_{i + 1}" for i in range(spec.covariate_dim)]
    names += ["theta_0"] + [f"theta_{j + 1}" for j in range(spec.ar_order)]
    names += [f"omega_{s}" for s in range(1, eta + 1)]
    names += ["omega_tilde_-1"] + [f"omega_tilde_{s}" for s in range(eta_tilde + 1)]
    names += ["r_init"]
    return names


def param_values(params: ModelParams) -> np.ndarray:
    """Flat natural-scale parameter vector, aligned with :func:`param_names`."""
    reg = params.regression
    return np.concatenate(
        [
            reg.beta,
            [reg.theta0],
            reg.theta,
            params.omega.weights,
            [params.omega_tilde.never],
            params.omega_tilde.weights,
            [params.r_init],
        ]
    )


# ---------------------------------------------------------------------------
# Gamma discretization
# ---------------------------------------------------------------------------


def discretize_gamma(shape: float, scale: float, mode: str, support: int):
    """Bin a Gamma(shape, scale) distribution into daily delay weights.

    ``mode="infectiousness"`` bins [s-1, s) onto day s for s = 1..support-1
    and puts the upper tail on day ``support``, returning an
    :class:`InfectiousnessFunction`.  ``mode="propensity"`` bins [s, s+1)
    onto delay s for s = 0..support-1 with the tail on ``support``, halves
    every weight and assigns the other half to never-admitted, returning a
    :class:`HospitalizationPropensity`.
    """
    if shape <= 0 or scale <= 0:
        raise ValueError("shape and scale must be positive")
    if support < 1:
        raise ValueError("support must be >= 1")
    dist = stats.gamma(a=shape, scale=scale)
    if mode == "infectiousness":
        edges = np.arange(0, support)  # 0..support-1
        w = np.diff(dist.cdf(edges))
        w = np.concatenate([w, [dist.sf(support - 1)]])
        return InfectiousnessFunction(w / w.sum())
    if mode == "propensity":
        edges = np.arange(0, support + 1)  # 0..support
        w = np.diff(dist.cdf(edges))
        w = np.concatenate([w, [dist.sf(support)]])
        w = 0.5 * w / w.sum()
        return HospitalizationPropensity(never=0.5, weights=w)
    raise ValueError(f"unknown mode {mode!r}")
