"""Forward simulation of coupled incidence/hospitalization series.

Each day draws new infections from Poisson(R_t * Lambda_t), splits them
multinomially over (never admitted, admitted after 0..eta_tilde days), and
assembles the observed admission counts from earlier days' splits.  Also
provides synthetic stationary covariate paths and the reporting-error
corruption used in misspecification studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .model import (
    EpidemicSeries,
    LatentAdmissions,
    ModelParams,
    RegressionSpec,
    infection_potential,
    log_rt_trajectory,
)

POISSON_MEAN_LIMIT = 2.0**62  # keep draws inside int64


@dataclass(frozen=True)
class SyntheticCovariates:
    """Spec for synthetic exogenous paths: each column is a stationary AR(1)
    Gaussian series (unit marginal variance) rescaled to a mean and scale.
    ``ar_coef`` may be a scalar (default 0.9) or one coefficient per column
    for processes with different day-to-day roughness."""

    dims: int
    means: tuple = ()
    scales: tuple = ()
    ar_coef: object = 0.9

    def __post_init__(self):
        if self.dims < 0:
            raise ValueError("dims must be >= 0")
        coefs = (
            (float(self.ar_coef),) * self.dims
            if np.isscalar(self.ar_coef)
            else tuple(float(a) for a in self.ar_coef)
        )
        if any(not 0 <= abs(a) < 1 for a in coefs):
            raise ValueError("ar coefficients must satisfy |a| < 1 for stationarity")
        if len(coefs) != self.dims:
            raise ValueError("ar_coef must be scalar or one entry per column")
        means = tuple(self.means) if self.means else (0.0,) * self.dims
        scales = tuple(self.scales) if self.scales else (1.0,) * self.dims
        if len(means) != self.dims or len(scales) != self.dims:
            raise ValueError("means/scales must have one entry per column")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "ar_coef", coefs)


@dataclass(frozen=True)
class UnderreportSpec:
    """Daily under-reporting fractions ~ Normal(mean, sd) clipped to
    [0, 2*mean], applied to the targeted count streams."""

    mean: float
    sd: float
    targets: str = "incidence"  # incidence | hospitalizations | both

    def __post_init__(self):
        if not 0.0 <= self.mean < 1.0 or self.sd < 0:
            raise ValueError("mean must lie in [0, 1) and sd must be >= 0")
        if self.targets not in ("incidence", "hospitalizations", "both"):
            raise ValueError("targets must be incidence, hospitalizations or both")


@dataclass(frozen=True)
class ScenarioConfig:
    params: ModelParams
    spec: RegressionSpec
    horizon: int
    seed_infections: int
    covariates: object  # SyntheticCovariates or a day-indexed (T+1, k) matrix
    underreport: UnderreportSpec | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.seed_infections < 1:
            raise ValueError("extinct-at-start scenarios are rejected (need I_0 >= 1)")


def synth_covariates(
    T: int,
    dims: int,
    seed: int,
    means=None,
    scales=None,
    ar_coef=0.9,
) -> np.ndarray:
    """Day-indexed (T+1, dims) matrix of independent stationary AR(1)
    Gaussian paths, deterministic per seed."""
    if T < 1:
        raise ValueError("T must be >= 1")
    cov_spec = SyntheticCovariates(
        dims=dims,
        means=tuple(means) if means is not None else (),
        scales=tuple(scales) if scales is not None else (),
        ar_coef=ar_coef,
    )
    gen = rngmod.substream(seed, rngmod.COVARIATES)
    out = np.empty((T + 1, dims))
    for j in range(dims):
        a = cov_spec.ar_coef[j]
        innov_sd = math.sqrt(1.0 - a * a)
        x = np.empty(T + 1)
        x[0] = gen.normal()
        eps = gen.normal(size=T)
        for t in range(1, T + 1):
            x[t] = a * x[t - 1] + innov_sd * eps[t - 1]
        out[:, j] = cov_spec.means[j] + cov_spec.scales[j] * x
    return out


def _resolve_covariates(config: ScenarioConfig, seed: int) -> np.ndarray:
    cov = config.covariates
    if isinstance(cov, SyntheticCovariates):
        return synth_covariates(
            config.horizon, cov.dims, seed, cov.means, cov.scales, cov.ar_coef
        )
    z = np.asarray(cov, dtype=float)
    if z.ndim != 2 or z.shape[0] < config.horizon + 1:
        raise ValueError("covariate matrix must be day-indexed with T+1 rows")
    return z[: config.horizon + 1]


def simulate(config: ScenarioConfig, seed: int):
    """Generate one epidemic: returns (series, latent admission splits,
    R_0..R_T).  Identical (config, seed) pairs reproduce bit-identical
    output; the reporting-error corruption is a separate step
    (:func:`corrupt_underreport`)."""
    T = config.horizon
    params, spec = config.params, config.spec
    covariates = _resolve_covariates(config, seed)
    r_path = np.exp(
        log_rt_trajectory(params.regression, params.r_init, spec, covariates, T)
    )
    full = params.omega_tilde.full_simplex()
    eta_tilde = params.omega_tilde.eta_tilde
    gen = rngmod.substream(seed, rngmod.EPIDEMIC)

    incidence = np.zeros(T + 1, dtype=np.int64)
    splits = np.zeros((T + 1, eta_tilde + 2), dtype=np.int64)
    incidence[0] = config.seed_infections
    splits[0] = gen.multinomial(incidence[0], full)
    for t in range(1, T + 1):
        lam = infection_potential(params.omega, incidence, t)
        mean = r_path[t] * lam
        if mean > POISSON_MEAN_LIMIT:
            raise OverflowError(
                f"day {t}: expected count {mean:.3g} exceeds the count range"
            )
        incidence[t] = gen.poisson(mean)
        splits[t] = gen.multinomial(incidence[t], full)

    hosp = np.zeros(T + 1, dtype=np.int64)
    for s in range(eta_tilde + 1):
        hosp[s:] += splits[: T + 1 - s, 1 + s]

    series = EpidemicSeries(incidence, hosp, covariates)
    return series, LatentAdmissions(splits), r_path


def corrupt_underreport(
    series: EpidemicSeries, mean: float, sd: float, targets: str, seed: int
) -> EpidemicSeries:
    """Apply daily under-reporting: one Normal(mean, sd) fraction per day,
    clipped to [0, 2*mean], scales every targeted stream; reported counts
    are rounded half-to-even.  Untargeted streams pass through unchanged."""
    urspec = UnderreportSpec(mean=mean, sd=sd, targets=targets)
    gen = rngmod.substream(seed, rngmod.UNDERREPORT)
    u = np.clip(gen.normal(urspec.mean, urspec.sd, size=series.incidence.size), 0.0, 2.0 * urspec.mean)
    inc = series.incidence
    hosp = series.hospitalizations
    if urspec.targets in ("incidence", "both"):
        inc = np.rint((1.0 - u) * inc).astype(np.int64)
    if urspec.targets in ("hospitalizations", "both"):
        hosp = np.rint((1.0 - u) * hosp).astype(np.int64)
    return EpidemicSeries(inc, hosp, series.covariates)
